//! Per-step / per-epoch diagnostics rows and their CSV encoding.
//!
//! Column order is fixed:
//! `step,epoch,loss,grad_ratio,min_weight_norm,loss_ratio,alpha,beta,rate_bound,eta,bounds_ok`.
//! Floats are written in shortest round-trip form with `.` as the decimal
//! separator, rows end in `\n`, and an undefined `loss_ratio` is an empty field.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::Result;

pub const CSV_HEADER: &str =
    "step,epoch,loss,grad_ratio,min_weight_norm,loss_ratio,alpha,beta,rate_bound,eta,bounds_ok";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsRecord {
    pub step: u64,
    pub epoch: u64,
    pub loss: f64,
    /// `||grad L||^2 / L` on the full training set.
    pub grad_ratio: f64,
    pub min_weight_norm: f64,
    /// `L_{t+1} / L_t`; empty on the first row of a run.
    pub loss_ratio: Option<f64>,
    pub alpha: f64,
    pub beta: f64,
    pub rate_bound: f64,
    pub eta: f64,
    pub bounds_ok: bool,
}

pub fn write_csv<W: Write>(out: W, records: &[DiagnosticsRecord]) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(true)
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    if records.is_empty() {
        w.write_record(CSV_HEADER.split(','))?;
    }
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn to_csv_string(records: &[DiagnosticsRecord]) -> Result<String> {
    let mut buf = Vec::new();
    write_csv(&mut buf, records)?;
    Ok(String::from_utf8(buf).expect("csv output is utf-8"))
}

pub fn read_csv<R: Read>(input: R) -> Result<Vec<DiagnosticsRecord>> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(input);
    let mut out = Vec::new();
    for row in r.deserialize() {
        out.push(row?);
    }
    Ok(out)
}
