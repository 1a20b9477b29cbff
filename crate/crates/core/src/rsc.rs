//! Restricted strong convexity (RSC) and smoothness-like parameters of the
//! square loss, gradient descent with the `eta = omega / beta` step rule, and
//! empirical checks of the two quadratic inequalities and the per-step rate.
//!
//! With `H` the closed-form predictor Hessian bound, `rho` the predictor
//! gradient bound and `varphi` the loss bound:
//!
//! ```text
//! alpha = (kappa^2 / 2) ||grad L||^2 / L  -  (4 rho rho2 + 2 sqrt(varphi)) H
//! beta  = 2 rho^2 + 2 sqrt(varphi) H
//! ```

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bounds::{
    dominance_from_stats, grad_theta_bound, hessian_bound, loss_bound_varphi, BoundInputs,
};
use crate::deriv::{batch_stats, loss, Batch};
use crate::error::{Error, Result};
use crate::harness::diagnostics::DiagnosticsRecord;
use crate::linalg::{add_scaled, dot, norm, normalized, sub};
use crate::net::{random_unit_vector, NetworkParams};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RscSnapshot {
    pub loss: f64,
    pub grad_norm_sq: f64,
    /// `||grad L||^2 / L`
    pub ratio: f64,
    pub alpha: f64,
    pub beta: f64,
    pub kappa: f64,
    pub rho2: f64,
    pub hessian_bound_used: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    Gd,
    Sgd,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Step-size multiplier in `eta = omega / beta`, in `(0, 2)`.
    pub omega: f64,
    pub kappa: f64,
    pub rho1: f64,
    /// `None` resolves to `10 * eta * ||grad L||` at the first step.
    pub rho2: Option<f64>,
    pub batch_size: usize,
    pub epochs: usize,
    pub optimizer: Optimizer,
    /// Overrides the `omega / beta` rule when set.
    pub fixed_lr: Option<f64>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            omega: 1.0,
            kappa: 0.5,
            rho1: 1.0,
            rho2: None,
            batch_size: 512,
            epochs: 20,
            optimizer: Optimizer::Gd,
            fixed_lr: None,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Precondition(msg));
        if !(self.omega > 0.0 && self.omega < 2.0) {
            return bad(format!("omega must lie in (0, 2), got {}", self.omega));
        }
        if !(self.kappa > 0.0 && self.kappa <= 1.0) {
            return bad(format!("kappa must lie in (0, 1], got {}", self.kappa));
        }
        if !(self.rho1 >= 0.0) {
            return bad(format!("rho1 must be nonnegative, got {}", self.rho1));
        }
        if let Some(r) = self.rho2 {
            if !(r > 0.0) {
                return bad(format!("rho2 must be positive, got {r}"));
            }
        }
        if let Some(lr) = self.fixed_lr {
            if !(lr > 0.0) {
                return bad(format!("learning rate must be positive, got {lr}"));
            }
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        Ok(())
    }
}

/// RSC parameter. Returns `+inf` at zero loss (global minimum); may be
/// negative, in which case RSC is not certified.
pub fn alpha_theta(loss: f64, grad_norm_sq: f64, kappa: f64, inp: &BoundInputs) -> f64 {
    if loss <= 0.0 {
        return f64::INFINITY;
    }
    let h = hessian_bound(inp);
    let rho = grad_theta_bound(inp);
    let varphi = loss_bound_varphi(inp);
    0.5 * kappa * kappa * grad_norm_sq / loss - (4.0 * rho * inp.rho2 + 2.0 * varphi.sqrt()) * h
}

/// Smoothness-like parameter `2 rho^2 + 2 sqrt(varphi) H`.
pub fn beta_theta(inp: &BoundInputs) -> f64 {
    let rho = grad_theta_bound(inp);
    2.0 * rho * rho + 2.0 * loss_bound_varphi(inp).sqrt() * hessian_bound(inp)
}

/// Per-step contraction factor `1 - (alpha/beta) omega (1 - gamma)(2 - omega)`.
pub fn rate_bound(alpha: f64, beta: f64, omega: f64, gamma: f64) -> f64 {
    1.0 - (alpha / beta) * omega * (1.0 - gamma) * (2.0 - omega)
}

pub fn snapshot(loss: f64, grad: &[f64], kappa: f64, inp: &BoundInputs) -> RscSnapshot {
    let grad_norm_sq = dot(grad, grad);
    RscSnapshot {
        loss,
        grad_norm_sq,
        ratio: if loss > 0.0 {
            grad_norm_sq / loss
        } else {
            f64::INFINITY
        },
        alpha: alpha_theta(loss, grad_norm_sq, kappa, inp),
        beta: beta_theta(inp),
        kappa,
        rho2: inp.rho2,
        hessian_bound_used: hessian_bound(inp),
    }
}

/// Result of one gradient step.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub params: NetworkParams,
    pub snapshot: RscSnapshot,
    pub record: DiagnosticsRecord,
    /// `alpha > 0` at the starting point.
    pub rsc_certified: bool,
    /// `||theta' - theta|| <= rho2`.
    pub within_rho2: bool,
    /// Number of times the step was halved to keep `v` near `v0`.
    pub halvings: usize,
    pub loss_after: f64,
}

pub const MAX_HALVINGS: usize = 30;

/// One step `theta' = theta - eta grad L(theta)` on `batch`.
///
/// `eta` is `config.fixed_lr` if set, else `omega / beta`. If `v'` leaves
/// the ball of radius `rho1` around `v0`, `eta` is halved (at most
/// [`MAX_HALVINGS`] times). `config.rho2 = None` resolves to
/// `10 * eta * ||grad L||` at this point.
pub fn gd_step(
    params: &NetworkParams,
    batch: &Batch<'_>,
    config: &TrainConfig,
    step: u64,
    epoch: u64,
) -> Result<StepOutcome> {
    config.validate()?;
    let (lg, stats) = batch_stats(params, batch)?;
    let y_sq = batch.y_sq_mean();
    let provisional = BoundInputs::measure(params, config.rho1, 0.0, y_sq);
    let beta = beta_theta(&provisional);
    let base_eta = config.fixed_lr.unwrap_or(config.omega / beta);
    let grad_norm = norm(&lg.grad);
    let rho2 = config.rho2.unwrap_or(10.0 * base_eta * grad_norm);
    let inp = BoundInputs {
        rho2,
        ..provisional
    };
    let snap = snapshot(lg.loss, &lg.grad, config.kappa, &inp);
    let bounds_ok = dominance_from_stats(&lg, &stats, &inp)?
        .iter()
        .all(|d| d.holds());

    let mut eta = base_eta;
    let mut halvings = 0;
    let next = loop {
        let theta = add_scaled(params.theta(), -eta, &lg.grad);
        let candidate = params.with_theta(&theta)?;
        if candidate.output_radius() <= config.rho1.max(params.output_radius()) {
            break candidate;
        }
        if halvings == MAX_HALVINGS {
            return Err(Error::StepRejected { halvings, eta });
        }
        eta *= 0.5;
        halvings += 1;
    };
    let step_norm = eta * grad_norm;
    let loss_after = loss(&next, batch)?;
    let omega_eff = eta * snap.beta;
    let record = DiagnosticsRecord {
        step,
        epoch,
        loss: lg.loss,
        grad_ratio: snap.ratio,
        min_weight_norm: params.min_weight_norm(),
        loss_ratio: (lg.loss > 0.0).then(|| loss_after / lg.loss),
        alpha: snap.alpha,
        beta: snap.beta,
        rate_bound: rate_bound(snap.alpha, snap.beta, omega_eff, 0.0),
        eta,
        bounds_ok,
    };
    Ok(StepOutcome {
        params: next,
        snapshot: snap,
        record,
        rsc_certified: snap.alpha > 0.0,
        within_rho2: step_norm <= rho2,
        halvings,
        loss_after,
    })
}

/// Points `theta'` with `|cos(theta' - theta, grad L)| >= kappa`,
/// `||theta' - theta|| <= rho2` and `||v' - v0|| <= rho1`.
#[derive(Debug, Clone)]
pub struct QSamples {
    pub samples: Vec<Vec<f64>>,
    pub attempts: usize,
}

impl QSamples {
    pub fn acceptance(&self) -> f64 {
        if self.attempts == 0 {
            return 0.0;
        }
        self.samples.len() as f64 / self.attempts as f64
    }
}

/// Draws `theta' = theta + r (c g + sqrt(1 - c^2) u)` with `g` the unit
/// gradient, `u` a random unit vector orthogonal to `g`, `|c|` uniform on
/// `[kappa, 1]` with random sign and `r` uniform on `(0, rho2]`, rejecting
/// draws whose `v'` leaves the `rho1` ball. Stops after `count` accepted
/// samples or `100 * count` attempts.
#[allow(clippy::too_many_arguments)]
pub fn sample_in_qkappa(
    params: &NetworkParams,
    grad: &[f64],
    kappa: f64,
    rho1: f64,
    rho2: f64,
    count: usize,
    seed: u64,
) -> Result<QSamples> {
    if !(kappa > 0.0 && kappa <= 1.0) || !(rho2 > 0.0) {
        return Err(Error::Precondition(format!(
            "need kappa in (0, 1] and rho2 > 0 (got {kappa}, {rho2})"
        )));
    }
    let g = normalized(grad).ok_or(Error::ZeroGradient)?;
    let theta = params.theta();
    let v_off = params.dims().v_offset();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut samples = Vec::with_capacity(count);
    let mut attempts = 0;
    while samples.len() < count && attempts < 100 * count.max(1) {
        attempts += 1;
        let mut u = random_unit_vector(&mut rng, theta.len());
        let proj = dot(&u, &g);
        u = add_scaled(&u, -proj, &g);
        let Some(u) = normalized(&u) else { continue };
        let c = rng.random_range(kappa..=1.0) * if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        let r = rho2 * (1.0 - rng.random::<f64>());
        let s = (1.0 - c * c).max(0.0).sqrt();
        let dir: Vec<f64> = g.iter().zip(&u).map(|(gi, ui)| c * gi + s * ui).collect();
        let candidate = add_scaled(theta, r, &dir);
        let delta = sub(&candidate, theta);
        let cos = dot(&delta, grad) / (norm(&delta) * norm(grad));
        if cos.abs() < kappa - 1e-12 {
            continue;
        }
        let v_dist = norm(&sub(&candidate[v_off..], params.v0()));
        if v_dist > rho1 {
            continue;
        }
        samples.push(candidate);
    }
    Ok(QSamples { samples, attempts })
}

/// First-order model of a function around `theta`, shared by the residuals.
#[derive(Debug, Clone)]
pub struct LocalModel {
    pub theta: Vec<f64>,
    pub value: f64,
    pub grad: Vec<f64>,
}

impl LocalModel {
    /// `value' - value - <d, grad>` for `d = theta' - theta`, together with
    /// `||d||^2`.
    fn excess(&self, theta_prime: &[f64], value_prime: f64) -> (f64, f64) {
        let d = sub(theta_prime, &self.theta);
        (value_prime - self.value - dot(&d, &self.grad), dot(&d, &d))
    }

    /// `f(theta') - [f(theta) + <d, grad> + (alpha/2) ||d||^2]`
    pub fn rsc_residual(&self, theta_prime: &[f64], value_prime: f64, alpha: f64) -> f64 {
        let (ex, d2) = self.excess(theta_prime, value_prime);
        ex - 0.5 * alpha * d2
    }

    /// `[f(theta) + <d, grad> + (beta/2) ||d||^2] - f(theta')`
    pub fn smoothness_residual(&self, theta_prime: &[f64], value_prime: f64, beta: f64) -> f64 {
        let (ex, d2) = self.excess(theta_prime, value_prime);
        0.5 * beta * d2 - ex
    }
}

pub fn local_loss_model(params: &NetworkParams, batch: &Batch<'_>) -> Result<LocalModel> {
    let lg = crate::deriv::loss_and_grad(params, batch)?;
    Ok(LocalModel {
        theta: params.theta().to_vec(),
        value: lg.loss,
        grad: lg.grad,
    })
}

/// `L(theta') - L(theta) - <theta' - theta, grad L(theta)> - (alpha/2)||theta' - theta||^2`
pub fn rsc_residual(
    params: &NetworkParams,
    theta_prime: &[f64],
    alpha: f64,
    batch: &Batch<'_>,
) -> Result<f64> {
    let model = local_loss_model(params, batch)?;
    let lp = loss(&params.with_theta(theta_prime)?, batch)?;
    Ok(model.rsc_residual(theta_prime, lp, alpha))
}

/// `L(theta) + <theta' - theta, grad L(theta)> + (beta/2)||theta' - theta||^2 - L(theta')`
pub fn smoothness_residual(
    params: &NetworkParams,
    theta_prime: &[f64],
    beta: f64,
    batch: &Batch<'_>,
) -> Result<f64> {
    let model = local_loss_model(params, batch)?;
    let lp = loss(&params.with_theta(theta_prime)?, batch)?;
    Ok(model.smoothness_residual(theta_prime, lp, beta))
}
