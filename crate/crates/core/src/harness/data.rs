//! IDX and CIFAR-10 binary readers, unit-norm preprocessing and synthetic
//! datasets.

use std::fmt;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::activation::ActivationSpec;
use crate::deriv::Batch;
use crate::error::{Error, Result};
use crate::linalg::norm;
use crate::net::{make_network, random_unit_vector, Dims, InitScheme, UNIT_NORM_TOL};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;
pub const CIFAR_RECORD_LEN: usize = 3073;
pub const CIFAR_IMAGE_LEN: usize = 3072;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DataSource {
    Mnist,
    Cifar10,
    SyntheticTeacher,
    SyntheticRandom,
}

impl fmt::Display for DataSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DataSource::Mnist => "mnist",
            DataSource::Cifar10 => "cifar10",
            DataSource::SyntheticTeacher => "synthetic-teacher",
            DataSource::SyntheticRandom => "synthetic-random",
        })
    }
}

impl std::str::FromStr for DataSource {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "mnist" => Ok(DataSource::Mnist),
            "cifar10" => Ok(DataSource::Cifar10),
            "synthetic-teacher" => Ok(DataSource::SyntheticTeacher),
            "synthetic-random" => Ok(DataSource::SyntheticRandom),
            other => Err(format!("unknown dataset '{other}'")),
        }
    }
}

/// Images as raw bytes, one flat vector per image.
#[derive(Debug, Clone, PartialEq)]
pub struct RawDataset {
    pub images: Vec<Vec<u8>>,
    pub labels: Vec<u8>,
    /// Bytes per image.
    pub image_len: usize,
    pub source: DataSource,
}

impl RawDataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// First `n` records.
    pub fn truncate(&mut self, n: usize) {
        self.images.truncate(n);
        self.labels.truncate(n);
    }
}

fn format_err(offset: usize, msg: impl Into<String>) -> Error {
    Error::Format {
        offset: offset as u64,
        msg: msg.into(),
    }
}

fn be_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| format_err(offset, "truncated header"))
}

/// Parses an IDX3 image file: magic `0x00000803`, count, rows, cols, then
/// `count * rows * cols` bytes. Returns the images and `rows * cols`.
pub fn parse_idx_images(bytes: &[u8]) -> Result<(Vec<Vec<u8>>, usize)> {
    let magic = be_u32(bytes, 0)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(format_err(0, format!("bad image magic {magic:#010x}")));
    }
    let count = be_u32(bytes, 4)? as usize;
    let rows = be_u32(bytes, 8)? as usize;
    let cols = be_u32(bytes, 12)? as usize;
    let len = rows * cols;
    let body = &bytes[16..];
    if body.len() != count * len {
        return Err(format_err(
            16 + body.len().min(count * len),
            format!("expected {} image bytes, found {}", count * len, body.len()),
        ));
    }
    let images = if len == 0 {
        vec![Vec::new(); count]
    } else {
        body.chunks_exact(len).map(<[u8]>::to_vec).collect()
    };
    Ok((images, len))
}

/// Parses an IDX1 label file: magic `0x00000801`, count, then `count` bytes.
pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    let magic = be_u32(bytes, 0)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(format_err(0, format!("bad label magic {magic:#010x}")));
    }
    let count = be_u32(bytes, 4)? as usize;
    let body = &bytes[8..];
    if body.len() != count {
        return Err(format_err(
            8 + body.len().min(count),
            format!("expected {count} labels, found {}", body.len()),
        ));
    }
    Ok(body.to_vec())
}

/// Reads an IDX image/label file pair.
pub fn load_idx(images: &Path, labels: &Path) -> Result<RawDataset> {
    let (imgs, image_len) = parse_idx_images(&std::fs::read(images)?)?;
    let labels = parse_idx_labels(&std::fs::read(labels)?)?;
    if imgs.len() != labels.len() {
        return Err(format_err(
            4,
            format!("{} images but {} labels", imgs.len(), labels.len()),
        ));
    }
    Ok(RawDataset {
        images: imgs,
        labels,
        image_len,
        source: DataSource::Mnist,
    })
}

/// Parses CIFAR-10 binary records: one label byte then 3072 pixel bytes.
pub fn parse_cifar_binary(bytes: &[u8]) -> Result<RawDataset> {
    if !bytes.len().is_multiple_of(CIFAR_RECORD_LEN) {
        let whole = bytes.len() / CIFAR_RECORD_LEN * CIFAR_RECORD_LEN;
        return Err(format_err(
            whole,
            format!(
                "trailing {} bytes do not form a record",
                bytes.len() - whole
            ),
        ));
    }
    let mut images = Vec::with_capacity(bytes.len() / CIFAR_RECORD_LEN);
    let mut labels = Vec::with_capacity(images.capacity());
    for rec in bytes.chunks_exact(CIFAR_RECORD_LEN) {
        labels.push(rec[0]);
        images.push(rec[1..].to_vec());
    }
    Ok(RawDataset {
        images,
        labels,
        image_len: CIFAR_IMAGE_LEN,
        source: DataSource::Cifar10,
    })
}

pub fn load_cifar_binary(path: &Path) -> Result<RawDataset> {
    parse_cifar_binary(&std::fs::read(path)?)
}

/// Inputs with unit L2 rows and targets in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub inputs: Vec<Vec<f64>>,
    pub targets: Vec<f64>,
    pub source: DataSource,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.inputs.first().map_or(0, Vec::len)
    }

    pub fn batch(&self) -> Result<Batch<'_>> {
        Batch::from_rows(&self.inputs, &self.targets)
    }

    /// Batch over the given sample indices.
    pub fn select(&self, idx: &[usize]) -> Result<Batch<'_>> {
        Batch::new(
            idx.iter().map(|&i| self.inputs[i].as_slice()).collect(),
            idx.iter().map(|&i| self.targets[i]).collect(),
        )
    }

    /// First `n` samples and the rest.
    pub fn split_at(mut self, n: usize) -> (Dataset, Dataset) {
        let n = n.min(self.len());
        let rest_x = self.inputs.split_off(n);
        let rest_y = self.targets.split_off(n);
        let source = self.source;
        (
            self,
            Dataset {
                inputs: rest_x,
                targets: rest_y,
                source,
            },
        )
    }

    pub fn validate(&self) -> Result<()> {
        if self.inputs.len() != self.targets.len() {
            return Err(Error::Dimension(format!(
                "{} inputs but {} targets",
                self.inputs.len(),
                self.targets.len()
            )));
        }
        let d = self.dim();
        for (i, (x, y)) in self.inputs.iter().zip(&self.targets).enumerate() {
            if x.len() != d {
                return Err(Error::Dimension(format!(
                    "row {i} has length {}, expected {d}",
                    x.len()
                )));
            }
            let n = norm(x);
            if (n - 1.0).abs() > UNIT_NORM_TOL {
                return Err(Error::NonUnitInput { norm: n });
            }
            if !(y.abs() <= 1.0) {
                return Err(Error::Precondition(format!(
                    "target {y} at row {i} outside [-1, 1]"
                )));
            }
        }
        Ok(())
    }
}

/// `k -> (k - 4.5) / 4.5`, sending digits `0..=9` onto `[-1, 1]`.
pub fn label_to_target(k: u8) -> f64 {
    (f64::from(k) - 4.5) / 4.5
}

/// Flattens each image, divides by its L2 norm and maps labels with
/// [`label_to_target`]. Zero-norm images are skipped and counted.
pub fn preprocess(raw: &RawDataset) -> Result<(Dataset, usize)> {
    if raw.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let mut inputs = Vec::with_capacity(raw.len());
    let mut targets = Vec::with_capacity(raw.len());
    let mut skipped = 0;
    for (i, (img, &label)) in raw.images.iter().zip(&raw.labels).enumerate() {
        if label > 9 {
            return Err(Error::Precondition(format!(
                "label {label} at record {i} is not a digit class"
            )));
        }
        let x: Vec<f64> = img.iter().map(|&b| f64::from(b)).collect();
        let n = norm(&x);
        if n == 0.0 {
            skipped += 1;
            continue;
        }
        inputs.push(x.into_iter().map(|v| v / n).collect());
        targets.push(label_to_target(label));
    }
    Ok((
        Dataset {
            inputs,
            targets,
            source: raw.source,
        },
        skipped,
    ))
}

/// Teacher network used to label synthetic inputs.
#[derive(Debug, Clone)]
pub struct TeacherSpec {
    pub m: usize,
    pub depth: usize,
    pub activation: ActivationSpec,
    pub init: InitScheme,
    pub seed: u64,
}

/// `n` points uniform on the unit sphere in `R^d`, labeled by a WeightNorm
/// teacher with `v = v0`. With `phi(0) = 0` and a 1-Lipschitz activation
/// the labels lie in `[-1, 1]`; they are clamped otherwise.
pub fn synthetic_teacher(d: usize, n: usize, teacher: &TeacherSpec, seed: u64) -> Result<Dataset> {
    let net = make_network(
        Dims::new(d, teacher.m, teacher.depth)?,
        teacher.activation,
        teacher.init,
        teacher.seed,
    )?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let inputs: Vec<Vec<f64>> = (0..n).map(|_| random_unit_vector(&mut rng, d)).collect();
    let targets = inputs
        .iter()
        .map(|x| net.predict(x).map(|y| y.clamp(-1.0, 1.0)))
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        inputs,
        targets,
        source: DataSource::SyntheticTeacher,
    })
}

/// Unit-sphere inputs with targets uniform on `[-1, 1]`.
pub fn synthetic_random(d: usize, n: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let inputs: Vec<Vec<f64>> = (0..n).map(|_| random_unit_vector(&mut rng, d)).collect();
    let targets = (0..n).map(|_| rng.random_range(-1.0..=1.0)).collect();
    Dataset {
        inputs,
        targets,
        source: DataSource::SyntheticRandom,
    }
}
