//! Experiment drivers behind the `train`, `verify`, `bounds` and `gen-gap`
//! subcommands.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::activation::ActivationSpec;
use crate::bounds::{
    check_dominance, dominance_from_stats, hessian_dominance, BoundInputs, BoundReport, Dominance,
    HessianProbe,
};
use crate::deriv::{batch_stats, grad_theta, grad_x, loss, loss_and_grad, Batch};
use crate::error::{Error, Result};
use crate::gen::{
    empirical_gap, generalization_bound, rademacher_bound, rademacher_lower_estimate,
    FamilySampler, GenInputs, GenReport, RademacherConfig,
};
use crate::harness::config::ExperimentConfig;
use crate::harness::data::{
    load_cifar_binary, load_idx, preprocess, synthetic_random, synthetic_teacher, DataSource,
    Dataset, RawDataset, TeacherSpec,
};
use crate::harness::diagnostics::{write_csv, DiagnosticsRecord};
use crate::linalg::norm;
use crate::net::{make_network, Dims, NetworkParams};
use crate::rsc::{
    alpha_theta, beta_theta, gd_step, local_loss_model, rate_bound, sample_in_qkappa, Optimizer,
};

/// Environment variable naming the directory that relative `data_path`
/// entries resolve against.
pub const DATA_DIR_ENV: &str = "WNORM_DATA_DIR";

pub fn data_dir_from_env() -> Option<PathBuf> {
    std::env::var_os(DATA_DIR_ENV).map(PathBuf::from)
}

#[derive(Debug, Clone)]
pub struct Splits {
    pub train: Dataset,
    pub heldout: Dataset,
    /// Zero-norm images dropped by preprocessing.
    pub skipped: usize,
}

const CIFAR_BATCHES: [&str; 5] = [
    "data_batch_1.bin",
    "data_batch_2.bin",
    "data_batch_3.bin",
    "data_batch_4.bin",
    "data_batch_5.bin",
];

fn load_raw(cfg: &ExperimentConfig, data_dir: Option<&Path>, wanted: usize) -> Result<RawDataset> {
    let base = cfg.resolve(cfg.data_path.as_deref().unwrap_or(Path::new(".")), data_dir);
    let mut raw = match cfg.dataset {
        DataSource::Mnist => load_idx(&base.join(&cfg.images), &base.join(&cfg.labels))?,
        DataSource::Cifar10 => {
            if base.is_file() {
                load_cifar_binary(&base)?
            } else {
                let mut acc: Option<RawDataset> = None;
                for name in CIFAR_BATCHES {
                    let part = load_cifar_binary(&base.join(name))?;
                    match acc.as_mut() {
                        None => acc = Some(part),
                        Some(a) => {
                            a.images.extend(part.images);
                            a.labels.extend(part.labels);
                        }
                    }
                    if acc.as_ref().is_some_and(|a| a.len() >= wanted) {
                        break;
                    }
                }
                acc.expect("at least one batch file")
            }
        }
        _ => unreachable!("synthetic sets are generated"),
    };
    raw.truncate(wanted);
    Ok(raw)
}

/// Training and held-out sets per the config. Image datasets take the first
/// `samples + heldout` records; synthetic sets are generated from `seed`.
pub fn load_dataset(cfg: &ExperimentConfig, data_dir: Option<&Path>) -> Result<Splits> {
    let wanted = cfg.samples + cfg.heldout;
    let (all, skipped) = match cfg.dataset {
        DataSource::Mnist | DataSource::Cifar10 => preprocess(&load_raw(cfg, data_dir, wanted)?)?,
        DataSource::SyntheticTeacher => {
            let teacher = TeacherSpec {
                m: cfg.teacher_width,
                depth: cfg.teacher_depth,
                activation: cfg.activation_spec()?,
                init: cfg.init,
                seed: cfg.teacher_seed,
            };
            (
                synthetic_teacher(cfg.input_dim, wanted, &teacher, cfg.train.seed)?,
                0,
            )
        }
        DataSource::SyntheticRandom => (synthetic_random(cfg.input_dim, wanted, cfg.train.seed), 0),
    };
    all.validate()?;
    let (train, heldout) = all.split_at(cfg.samples);
    if train.is_empty() {
        return Err(Error::EmptyBatch);
    }
    Ok(Splits {
        train,
        heldout,
        skipped,
    })
}

pub fn make_student(cfg: &ExperimentConfig, d: usize, seed: u64) -> Result<NetworkParams> {
    make_network(
        Dims::new(d, cfg.width, cfg.depth)?,
        cfg.activation_spec()?,
        cfg.init,
        seed,
    )
}

/// Serializable parameters. Custom activations cannot be stored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamsSnapshot {
    pub d: usize,
    pub m: usize,
    pub depth: usize,
    pub activation: String,
    pub theta: Vec<f64>,
    pub v0: Vec<f64>,
}

impl ParamsSnapshot {
    pub fn from_params(p: &NetworkParams) -> Self {
        let dims = p.dims();
        ParamsSnapshot {
            d: dims.d,
            m: dims.m,
            depth: dims.depth,
            activation: p.activation().kind.to_string(),
            theta: p.theta().to_vec(),
            v0: p.v0().to_vec(),
        }
    }

    pub fn into_params(self) -> Result<NetworkParams> {
        NetworkParams::from_parts(
            Dims::new(self.d, self.m, self.depth)?,
            self.theta,
            self.v0,
            ActivationSpec::from_name(&self.activation)?,
        )
    }
}

fn probe(cfg: &ExperimentConfig) -> Option<HessianProbe> {
    (cfg.hessian_samples > 0).then(|| HessianProbe {
        samples: cfg.hessian_samples,
        ..HessianProbe::default()
    })
}

/// Step size leaving `params`: the fixed rate if configured, else `omega / beta`.
fn step_size(cfg: &ExperimentConfig, beta: f64) -> f64 {
    cfg.train.fixed_lr.unwrap_or(cfg.train.omega / beta)
}

/// Diagnostics row describing `params` on the full training set. `alpha`,
/// `beta`, `eta` and `rate_bound` refer to the step leaving `params`;
/// `loss_ratio` compares with the previous row.
pub fn snapshot_record(
    params: &NetworkParams,
    full: &Batch<'_>,
    cfg: &ExperimentConfig,
    step: u64,
    epoch: u64,
    prev_loss: Option<f64>,
) -> Result<(DiagnosticsRecord, BoundInputs, Vec<Dominance>)> {
    let (lg, stats) = batch_stats(params, full)?;
    let y_sq = full.y_sq_mean();
    let beta = beta_theta(&BoundInputs::measure(params, cfg.train.rho1, 0.0, y_sq));
    let eta = step_size(cfg, beta);
    let grad_sq = lg.grad.iter().map(|g| g * g).sum::<f64>();
    let rho2 = cfg.train.rho2.unwrap_or(10.0 * eta * grad_sq.sqrt());
    let inp = BoundInputs::measure(params, cfg.train.rho1, rho2, y_sq);
    let mut dominance = dominance_from_stats(&lg, &stats, &inp)?;
    if let Some(p) = probe(cfg) {
        dominance.push(hessian_dominance(params, &full.inputs, &inp, p)?);
    }
    let alpha = alpha_theta(lg.loss, grad_sq, cfg.train.kappa, &inp);
    let record = DiagnosticsRecord {
        step,
        epoch,
        loss: lg.loss,
        grad_ratio: if lg.loss > 0.0 {
            grad_sq / lg.loss
        } else {
            f64::INFINITY
        },
        min_weight_norm: params.min_weight_norm(),
        loss_ratio: prev_loss.filter(|p| *p > 0.0).map(|p| lg.loss / p),
        alpha,
        beta,
        rate_bound: rate_bound(alpha, beta, eta * beta, 0.0),
        eta,
        bounds_ok: dominance.iter().all(Dominance::holds),
    };
    Ok((record, inp, dominance))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub dataset: DataSource,
    pub samples: usize,
    pub heldout: usize,
    pub skipped: usize,
    pub steps: u64,
    pub final_loss: f64,
    pub heldout_loss: Option<f64>,
    pub inputs: BoundInputs,
    pub bounds: BoundReport,
    pub dominance: Vec<Dominance>,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub records: Vec<DiagnosticsRecord>,
    pub params: NetworkParams,
    pub report: TrainReport,
}

/// Trains per `cfg` and records one diagnostics row per epoch plus the
/// initial row (epoch 0, empty `loss_ratio`). `gd` takes one full-batch step
/// per epoch; `sgd` sweeps seeded shuffled minibatches.
pub fn run_experiment(cfg: &ExperimentConfig, data_dir: Option<&Path>) -> Result<ExperimentOutput> {
    let splits = load_dataset(cfg, data_dir)?;
    run_on(cfg, &splits)
}

pub fn run_on(cfg: &ExperimentConfig, splits: &Splits) -> Result<ExperimentOutput> {
    let train = &splits.train;
    let full = train.batch()?;
    let mut params = make_student(cfg, train.dim(), cfg.train.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.train.seed ^ 0x5eed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let (first, _, _) = snapshot_record(&params, &full, cfg, 0, 0, None)?;
    let mut prev_loss = first.loss;
    let mut records = vec![first];
    let mut step = 0u64;
    for epoch in 1..=cfg.train.epochs as u64 {
        match cfg.train.optimizer {
            Optimizer::Gd => {
                params = gd_step(&params, &full, &cfg.train, step, epoch)?.params;
                step += 1;
            }
            Optimizer::Sgd => {
                order.shuffle(&mut rng);
                for chunk in order.chunks(cfg.train.batch_size) {
                    let mb = train.select(chunk)?;
                    params = gd_step(&params, &mb, &cfg.train, step, epoch)?.params;
                    step += 1;
                }
            }
        }
        let (rec, _, _) = snapshot_record(&params, &full, cfg, step, epoch, Some(prev_loss))?;
        prev_loss = rec.loss;
        records.push(rec);
    }
    let (last, inp, dominance) =
        snapshot_record(&params, &full, cfg, step, cfg.train.epochs as u64, None)?;
    let heldout_loss = if splits.heldout.is_empty() {
        None
    } else {
        Some(loss(&params, &splits.heldout.batch()?)?)
    };
    let report = TrainReport {
        dataset: train.source,
        samples: train.len(),
        heldout: splits.heldout.len(),
        skipped: splits.skipped,
        steps: step,
        final_loss: last.loss,
        heldout_loss,
        inputs: inp,
        bounds: BoundReport::new(&inp)?,
        dominance,
    };
    Ok(ExperimentOutput {
        records,
        params,
        report,
    })
}

/// Writes `diagnostics.csv`, `report.json` and `params.json` into `dir`.
pub fn write_outputs(out: &ExperimentOutput, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_csv(fs::File::create(dir.join("diagnostics.csv"))?, &out.records)?;
    fs::write(
        dir.join("report.json"),
        serde_json::to_string_pretty(&out.report)?,
    )?;
    fs::write(
        dir.join("params.json"),
        serde_json::to_string(&ParamsSnapshot::from_params(&out.params))?,
    )?;
    Ok(())
}

/// Aggregate of one kind of check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckSummary {
    pub name: String,
    pub count: usize,
    pub failures: usize,
    /// Smallest margin seen; negative means a failure.
    pub worst_margin: f64,
}

impl CheckSummary {
    fn new(name: &str) -> Self {
        CheckSummary {
            name: name.to_string(),
            count: 0,
            failures: 0,
            worst_margin: f64::INFINITY,
        }
    }

    fn record(&mut self, margin: f64) {
        self.count += 1;
        if !(margin >= 0.0) {
            self.failures += 1;
        }
        if margin < self.worst_margin || margin.is_nan() {
            self.worst_margin = margin;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub checks: Vec<CheckSummary>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.failures == 0)
    }

    pub fn failures(&self) -> Vec<&CheckSummary> {
        self.checks.iter().filter(|c| c.failures > 0).collect()
    }

    fn entry(&mut self, name: &str) -> &mut CheckSummary {
        if let Some(i) = self.checks.iter().position(|c| c.name == name) {
            return &mut self.checks[i];
        }
        self.checks.push(CheckSummary::new(name));
        self.checks.last_mut().expect("just pushed")
    }
}

/// Largest checked coordinate count for parameter-space finite differences.
pub const FD_MAX_COORDS: usize = 512;
const FD_STEP: f64 = 1e-5;

fn fd_coords(len: usize, seed: u64) -> Vec<usize> {
    let mut all: Vec<usize> = (0..len).collect();
    if len > FD_MAX_COORDS {
        all.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        all.truncate(FD_MAX_COORDS);
        all.sort_unstable();
    }
    all
}

/// `max_k |fd_k - an_k| / ||an||` over `coords`, with `f` evaluated at
/// `theta +- h e_k`.
fn fd_rel_error<F>(f: F, point: &[f64], analytic: &[f64], coords: &[usize]) -> Result<f64>
where
    F: Fn(&[f64]) -> Result<f64>,
{
    let mut p = point.to_vec();
    let mut worst: f64 = 0.0;
    for &k in coords {
        let orig = p[k];
        p[k] = orig + FD_STEP;
        let up = f(&p)?;
        p[k] = orig - FD_STEP;
        let dn = f(&p)?;
        p[k] = orig;
        worst = worst.max(((up - dn) / (2.0 * FD_STEP) - analytic[k]).abs());
    }
    Ok(worst / norm(analytic).max(1e-12))
}

/// Finite-difference, dominance, RSC/smoothness residual and rate checks on
/// `verify_nets` freshly initialized students.
pub fn verify(cfg: &ExperimentConfig, data_dir: Option<&Path>) -> Result<VerifyReport> {
    let splits = load_dataset(cfg, data_dir)?;
    verify_on(cfg, &splits.train)
}

pub fn verify_on(cfg: &ExperimentConfig, data: &Dataset) -> Result<VerifyReport> {
    let vs = &cfg.verify;
    let mut report = VerifyReport { checks: Vec::new() };
    let d = data.dim();
    let pts = vs.points.clamp(1, data.len());
    for net in 0..vs.nets {
        let seed = cfg.train.seed.wrapping_add(net as u64);
        let params = make_student(cfg, d, seed)?;
        let start = (net * pts) % data.len();
        let idx: Vec<usize> = (0..pts).map(|i| (start + i) % data.len()).collect();
        let batch = data.select(&idx)?;
        let x0 = batch.inputs[0];
        let coords = fd_coords(params.theta().len(), seed);

        let mut g = grad_theta(&params, x0)?.into_vec();
        if vs.corrupt_gradient {
            g[coords[0]] += 1e-3 * (1.0 + norm(&g));
        }
        let err = fd_rel_error(
            |t| params.with_theta(t)?.predict(x0),
            params.theta(),
            &g,
            &coords,
        )?;
        report.entry("grad_theta_fd").record(vs.fd_tol - err);

        let gx = grad_x(&params, x0)?;
        let all: Vec<usize> = (0..d).collect();
        let err = fd_rel_error(|x| Ok(params.forward_unchecked(x)?.output), x0, &gx, &all)?;
        report.entry("grad_x_fd").record(vs.fd_tol - err);

        let lg = loss_and_grad(&params, &batch)?;
        let err = fd_rel_error(
            |t| loss(&params.with_theta(t)?, &batch),
            params.theta(),
            &lg.grad,
            &coords,
        )?;
        report.entry("loss_grad_fd").record(vs.fd_tol - err);

        let y_sq = batch.y_sq_mean();
        let beta = beta_theta(&BoundInputs::measure(&params, cfg.train.rho1, 0.0, y_sq));
        let eta = step_size(cfg, beta);
        let rho2 = cfg.train.rho2.unwrap_or(10.0 * eta * norm(&lg.grad));
        let inp = BoundInputs::measure(&params, cfg.train.rho1, rho2, y_sq);
        for dom in check_dominance(&params, &batch, &inp, probe(cfg))? {
            let rel = dom.margin() / dom.bound.abs().max(f64::MIN_POSITIVE);
            report
                .entry(&format!("dominance:{}", dom.quantity))
                .record(rel);
        }

        let alpha = alpha_theta(
            lg.loss,
            lg.grad.iter().map(|x| x * x).sum(),
            cfg.train.kappa,
            &inp,
        );
        report
            .entry("alpha_lt_beta")
            .record(if alpha.is_finite() { beta - alpha } else { 0.0 });
        if alpha.is_finite() && rho2 > 0.0 && vs.samples > 0 {
            let model = local_loss_model(&params, &batch)?;
            let qs = sample_in_qkappa(
                &params,
                &lg.grad,
                cfg.train.kappa,
                inp.rho1,
                rho2,
                vs.samples,
                seed,
            )?;
            for tp in &qs.samples {
                let lp = loss(&params.with_theta(tp)?, &batch)?;
                report
                    .entry("rsc_residual")
                    .record(model.rsc_residual(tp, lp, alpha) + vs.residual_tol);
                report
                    .entry("smoothness_residual")
                    .record(model.smoothness_residual(tp, lp, beta) + vs.residual_tol);
            }
        }

        if alpha > 0.0 && alpha.is_finite() {
            let mut tc = cfg.train;
            tc.rho2 = Some(rho2);
            let out = gd_step(&params, &batch, &tc, 0, 0)?;
            if out.halvings == 0 {
                let ratio = out.loss_after / lg.loss;
                report.entry("rate").record(out.record.rate_bound - ratio);
            }
        }
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundsSummary {
    pub inputs: BoundInputs,
    pub bounds: BoundReport,
    pub alpha: f64,
    pub beta: f64,
    pub dominance: Vec<Dominance>,
}

/// Closed-form bounds at `params` (from the `params` snapshot if configured,
/// else a fresh student) together with the measured quantities on the
/// training set.
pub fn bounds_report(cfg: &ExperimentConfig, data_dir: Option<&Path>) -> Result<BoundsSummary> {
    let splits = load_dataset(cfg, data_dir)?;
    let params = match &cfg.params {
        Some(p) => {
            let text = fs::read_to_string(cfg.resolve(p, data_dir))?;
            serde_json::from_str::<ParamsSnapshot>(&text)?.into_params()?
        }
        None => make_student(cfg, splits.train.dim(), cfg.train.seed)?,
    };
    bounds_at(cfg, &params, &splits.train.batch()?)
}

pub fn bounds_at(
    cfg: &ExperimentConfig,
    params: &NetworkParams,
    batch: &Batch<'_>,
) -> Result<BoundsSummary> {
    let (_, inp, dominance) = snapshot_record(params, batch, cfg, 0, 0, None)?;
    let lg = loss_and_grad(params, batch)?;
    Ok(BoundsSummary {
        inputs: inp,
        bounds: BoundReport::new(&inp)?,
        alpha: alpha_theta(
            lg.loss,
            lg.grad.iter().map(|g| g * g).sum(),
            cfg.train.kappa,
            &inp,
        ),
        beta: beta_theta(&inp),
        dominance,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenGapSummary {
    pub trials: Vec<GenReport>,
    /// Closed-form Rademacher bound at the configured `n`, `L`, `rho1`.
    pub rademacher_bound: f64,
    /// Trials with `gap <= bound`.
    pub within_bound: usize,
}

/// `gen_trials` seeded trials: fresh data split, train, measure the
/// held-out gap, evaluate the bound and the Rademacher lower estimate.
pub fn gen_gap(cfg: &ExperimentConfig, data_dir: Option<&Path>) -> Result<GenGapSummary> {
    let act = cfg.activation_spec()?;
    let mut trials = Vec::with_capacity(cfg.gen.trials);
    for t in 0..cfg.gen.trials as u64 {
        let mut tc = cfg.clone();
        tc.train.seed = cfg.train.seed.wrapping_add(t);
        tc.hessian_samples = 0;
        let splits = load_dataset(&tc, data_dir)?;
        if splits.heldout.is_empty() {
            return Err(Error::Precondition("gen-gap needs heldout > 0".into()));
        }
        let out = run_on(&tc, &splits)?;
        let train = splits.train.batch()?;
        let held = splits.heldout.batch()?;
        let gap = empirical_gap(&out.params, &train, &held)?;
        let rho1 = cfg.train.rho1.max(out.params.output_radius());
        let gi = GenInputs {
            rho1,
            depth: cfg.depth,
            n: splits.train.len(),
            delta: cfg.gen.delta,
        };
        let sampler = FamilySampler {
            dims: out.params.dims(),
            activation: act,
            init: cfg.init,
            rho1,
            seed: tc.train.seed,
        };
        let rad = RademacherConfig {
            sign_draws: cfg.gen.sign_draws,
            nets: cfg.gen.nets,
            seed: tc.train.seed,
            sup_over_v: cfg.gen.sup_over_v,
        };
        trials.push(GenReport {
            bound: generalization_bound(&gi, &act)?,
            gap,
            rademacher_lower: rademacher_lower_estimate(&splits.train.inputs, &sampler, &rad)?,
            n: gi.n,
            depth: gi.depth,
            rho1,
            delta: gi.delta,
        });
    }
    let within_bound = trials.iter().filter(|r| r.gap <= r.bound).count();
    Ok(GenGapSummary {
        rademacher_bound: rademacher_bound(cfg.train.rho1, cfg.depth, cfg.samples),
        trials,
        within_bound,
    })
}
