//! Dataset ingestion, experiment configuration, diagnostics emission and the
//! experiment drivers behind the CLI.

pub mod config;
pub mod data;
pub mod diagnostics;
pub mod experiment;
