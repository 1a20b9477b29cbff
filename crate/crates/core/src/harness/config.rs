//! Flat `key = value` experiment configuration.
//!
//! Blank lines and text after `#` are ignored. Keys:
//!
//! | key | default | meaning |
//! |---|---|---|
//! | `dataset` | `synthetic-teacher` | `mnist`, `cifar10`, `synthetic-teacher`, `synthetic-random` |
//! | `data_path` | | file or directory, relative paths resolve against the data directory |
//! | `images`, `labels` | `train-images-idx3-ubyte`, `train-labels-idx1-ubyte` | IDX file names inside `data_path` |
//! | `samples` | 1024 | training samples |
//! | `heldout` | 256 | held-out samples |
//! | `input_dim` | 16 | synthetic input dimension |
//! | `teacher_width`, `teacher_depth`, `teacher_seed` | 16, 2, 1 | synthetic teacher |
//! | `width`, `depth`, `activation` | 64, 2, `tanh` | student network |
//! | `init`, `init_scale` | `uniform`, 1.0 | hidden-row init: `uniform` (scale over sqrt m) or `gaussian` (sigma) |
//! | `optimizer` | `gd` | `gd` (full batch) or `sgd` |
//! | `lr` | | fixed step size; unset means `omega / beta` |
//! | `omega`, `kappa`, `rho1`, `rho2` | 1.0, 0.5, 1.0, unset | RSC settings |
//! | `batch_size`, `epochs`, `seed` | 512, 20, 0 | |
//! | `hessian_samples` | 1 | samples per snapshot whose Hessian norm is checked, 0 disables |
//! | `output_dir` | `out` | where `train` writes `diagnostics.csv` and `report.json` |
//! | `params` | | parameter snapshot JSON for `bounds` |
//! | `delta`, `rad_sign_draws`, `rad_nets`, `rad_sup_over_v`, `gen_trials` | 0.1, 32, 8, false, 20 | `gen-gap` |
//! | `verify_nets`, `verify_points`, `verify_samples`, `verify_fd_tol`, `verify_residual_tol`, `verify_corrupt_gradient` | 20, 8, 200, 1e-6, 1e-8, false | `verify` |

use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::activation::ActivationSpec;
use crate::error::{Error, Result};
use crate::harness::data::DataSource;
use crate::net::InitScheme;
use crate::rsc::{Optimizer, TrainConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct VerifySettings {
    pub nets: usize,
    pub points: usize,
    /// Sampled `theta'` per net for the residual checks.
    pub samples: usize,
    pub fd_tol: f64,
    pub residual_tol: f64,
    /// Fault injection: perturbs the analytic gradient before comparing.
    pub corrupt_gradient: bool,
}

impl Default for VerifySettings {
    fn default() -> Self {
        VerifySettings {
            nets: 20,
            points: 8,
            samples: 200,
            fd_tol: 1e-6,
            residual_tol: 1e-8,
            corrupt_gradient: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenSettings {
    pub delta: f64,
    pub sign_draws: usize,
    pub nets: usize,
    pub sup_over_v: bool,
    pub trials: usize,
}

impl Default for GenSettings {
    fn default() -> Self {
        GenSettings {
            delta: 0.1,
            sign_draws: 32,
            nets: 8,
            sup_over_v: false,
            trials: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub dataset: DataSource,
    pub data_path: Option<PathBuf>,
    pub images: String,
    pub labels: String,
    pub samples: usize,
    pub heldout: usize,
    pub input_dim: usize,
    pub teacher_width: usize,
    pub teacher_depth: usize,
    pub teacher_seed: u64,
    pub width: usize,
    pub depth: usize,
    pub activation: String,
    pub init: InitScheme,
    pub train: TrainConfig,
    pub hessian_samples: usize,
    pub output_dir: PathBuf,
    pub params: Option<PathBuf>,
    pub gen: GenSettings,
    pub verify: VerifySettings,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            dataset: DataSource::SyntheticTeacher,
            data_path: None,
            images: "train-images-idx3-ubyte".into(),
            labels: "train-labels-idx1-ubyte".into(),
            samples: 1024,
            heldout: 256,
            input_dim: 16,
            teacher_width: 16,
            teacher_depth: 2,
            teacher_seed: 1,
            width: 64,
            depth: 2,
            activation: "tanh".into(),
            init: InitScheme::Uniform { scale: 1.0 },
            train: TrainConfig::default(),
            hessian_samples: 1,
            output_dir: PathBuf::from("out"),
            params: None,
            gen: GenSettings::default(),
            verify: VerifySettings::default(),
        }
    }
}

fn parse_value<T: FromStr>(line: usize, key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| Error::Config {
        line,
        msg: format!("invalid value '{value}' for {key}"),
    })
}

fn parse_bool(line: usize, key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(Error::Config {
            line,
            msg: format!("invalid boolean '{value}' for {key}"),
        }),
    }
}

/// `(line, key, value)` triples in file order.
pub fn parse_pairs(text: &str) -> Result<Vec<(usize, String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let (k, v) = content.split_once('=').ok_or_else(|| Error::Config {
            line,
            msg: format!("expected 'key = value', found '{content}'"),
        })?;
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() {
            return Err(Error::Config {
                line,
                msg: "empty key".into(),
            });
        }
        if out
            .iter()
            .any(|(_, seen, _): &(usize, String, String)| seen == k)
        {
            return Err(Error::Config {
                line,
                msg: format!("duplicate key '{k}'"),
            });
        }
        out.push((line, k.to_string(), v.to_string()));
    }
    Ok(out)
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        let mut init_kind = "uniform".to_string();
        let mut init_scale = 1.0;
        for (line, key, value) in parse_pairs(text)? {
            let (k, v) = (key.as_str(), value.as_str());
            match k {
                "dataset" => {
                    cfg.dataset = v.parse().map_err(|msg| Error::Config { line, msg })?;
                }
                "data_path" => cfg.data_path = Some(PathBuf::from(v)),
                "images" => cfg.images = v.to_string(),
                "labels" => cfg.labels = v.to_string(),
                "samples" => cfg.samples = parse_value(line, k, v)?,
                "heldout" => cfg.heldout = parse_value(line, k, v)?,
                "input_dim" => cfg.input_dim = parse_value(line, k, v)?,
                "teacher_width" => cfg.teacher_width = parse_value(line, k, v)?,
                "teacher_depth" => cfg.teacher_depth = parse_value(line, k, v)?,
                "teacher_seed" => cfg.teacher_seed = parse_value(line, k, v)?,
                "width" => cfg.width = parse_value(line, k, v)?,
                "depth" => cfg.depth = parse_value(line, k, v)?,
                "activation" => {
                    ActivationSpec::from_name(v).map_err(|e| Error::Config {
                        line,
                        msg: e.to_string(),
                    })?;
                    cfg.activation = v.to_string();
                }
                "init" => init_kind = v.to_string(),
                "init_scale" => init_scale = parse_value(line, k, v)?,
                "optimizer" => {
                    cfg.train.optimizer = match v {
                        "gd" => Optimizer::Gd,
                        "sgd" => Optimizer::Sgd,
                        _ => {
                            return Err(Error::Config {
                                line,
                                msg: format!("unknown optimizer '{v}'"),
                            })
                        }
                    }
                }
                "lr" => cfg.train.fixed_lr = Some(parse_value(line, k, v)?),
                "omega" => cfg.train.omega = parse_value(line, k, v)?,
                "kappa" => cfg.train.kappa = parse_value(line, k, v)?,
                "rho1" => cfg.train.rho1 = parse_value(line, k, v)?,
                "rho2" => cfg.train.rho2 = Some(parse_value(line, k, v)?),
                "batch_size" => cfg.train.batch_size = parse_value(line, k, v)?,
                "epochs" => cfg.train.epochs = parse_value(line, k, v)?,
                "seed" => cfg.train.seed = parse_value(line, k, v)?,
                "hessian_samples" => cfg.hessian_samples = parse_value(line, k, v)?,
                "output_dir" => cfg.output_dir = PathBuf::from(v),
                "params" => cfg.params = Some(PathBuf::from(v)),
                "delta" => cfg.gen.delta = parse_value(line, k, v)?,
                "rad_sign_draws" => cfg.gen.sign_draws = parse_value(line, k, v)?,
                "rad_nets" => cfg.gen.nets = parse_value(line, k, v)?,
                "rad_sup_over_v" => cfg.gen.sup_over_v = parse_bool(line, k, v)?,
                "gen_trials" => cfg.gen.trials = parse_value(line, k, v)?,
                "verify_nets" => cfg.verify.nets = parse_value(line, k, v)?,
                "verify_points" => cfg.verify.points = parse_value(line, k, v)?,
                "verify_samples" => cfg.verify.samples = parse_value(line, k, v)?,
                "verify_fd_tol" => cfg.verify.fd_tol = parse_value(line, k, v)?,
                "verify_residual_tol" => cfg.verify.residual_tol = parse_value(line, k, v)?,
                "verify_corrupt_gradient" => cfg.verify.corrupt_gradient = parse_bool(line, k, v)?,
                _ => {
                    return Err(Error::Config {
                        line,
                        msg: format!("unknown key '{k}'"),
                    })
                }
            }
            if k == "init" || k == "init_scale" {
                cfg.init = match init_kind.as_str() {
                    "uniform" => InitScheme::Uniform { scale: init_scale },
                    "gaussian" => InitScheme::Gaussian { sigma: init_scale },
                    other => {
                        return Err(Error::Config {
                            line,
                            msg: format!("unknown init '{other}'"),
                        })
                    }
                };
            }
        }
        cfg.train.validate().map_err(|e| Error::Config {
            line: 0,
            msg: e.to_string(),
        })?;
        if cfg.width == 0 || cfg.depth == 0 || cfg.samples == 0 {
            return Err(Error::Config {
                line: 0,
                msg: "width, depth and samples must be positive".into(),
            });
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn activation_spec(&self) -> Result<ActivationSpec> {
        ActivationSpec::from_name(&self.activation)
    }

    /// `path` as given if absolute or no data directory is set, else joined
    /// onto `data_dir`.
    pub fn resolve(&self, path: &Path, data_dir: Option<&Path>) -> PathBuf {
        match data_dir {
            Some(dir) if path.is_relative() => dir.join(path),
            _ => path.to_path_buf(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_keys_and_comments() {
        let text = "# desk run\n\ndataset = mnist  # subset\nwidth=128\nlr = 0.001\noptimizer = sgd\ninit = gaussian\ninit_scale = 0.5\nrad_sup_over_v = true\n";
        let cfg = ExperimentConfig::parse(text).unwrap();
        assert_eq!(cfg.dataset, DataSource::Mnist);
        assert_eq!(cfg.width, 128);
        assert_eq!(cfg.train.fixed_lr, Some(0.001));
        assert_eq!(cfg.train.optimizer, Optimizer::Sgd);
        assert_eq!(cfg.init, InitScheme::Gaussian { sigma: 0.5 });
        assert!(cfg.gen.sup_over_v);
        assert_eq!(cfg.depth, 2);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let err = ExperimentConfig::parse("width = 4\n\nbogus = 1\n").unwrap_err();
        assert!(matches!(err, Error::Config { line: 3, .. }), "{err}");
        let err = ExperimentConfig::parse("width = four\n").unwrap_err();
        assert!(matches!(err, Error::Config { line: 1, .. }));
        let err = ExperimentConfig::parse("width\n").unwrap_err();
        assert!(matches!(err, Error::Config { line: 1, .. }));
        let err = ExperimentConfig::parse("depth = 2\ndepth = 3\n").unwrap_err();
        assert!(matches!(err, Error::Config { line: 2, .. }));
        let err = ExperimentConfig::parse("activation = relu\n").unwrap_err();
        assert!(matches!(err, Error::Config { line: 1, .. }));
        assert!(ExperimentConfig::parse("omega = 2.5\n").is_err());
    }

    #[test]
    fn resolves_relative_paths() {
        let cfg = ExperimentConfig::default();
        let dir = Path::new("/data");
        assert_eq!(
            cfg.resolve(Path::new("mnist"), Some(dir)),
            PathBuf::from("/data/mnist")
        );
        assert_eq!(
            cfg.resolve(Path::new("/x/y"), Some(dir)),
            PathBuf::from("/x/y")
        );
        assert_eq!(cfg.resolve(Path::new("m"), None), PathBuf::from("m"));
    }
}
