//! Closed-form bounds on the predictor, its gradients and Hessian, and the
//! square loss, with every constant made explicit.
//!
//! All curvature bounds take the *unsquared* minimum row norm `minw` and
//! divide by `minw` or `minw^2` exactly where the corresponding chain-rule
//! factor does; for `minw < 1` the squared branch dominates.
//!
//! [`BoundReport`] serializes to a flat JSON object with the keys
//! `layer_output` (array indexed by layer count `0..=L`), `predictor_abs`,
//! `grad_theta_rho`, `grad_x`, `hessian_spec`, `loss_varphi`, `loss_grad`.

use serde::{Deserialize, Serialize};

use crate::deriv::{batch_stats, hessian_spectral_norm, Batch, LossGrad, SampleStats};
use crate::error::{Error, Result};
use crate::linalg::norm;
use crate::net::NetworkParams;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundInputs {
    pub m: usize,
    pub depth: usize,
    /// `|phi(0)|`
    pub phi0: f64,
    pub beta_phi: f64,
    /// Radius of the ball around `v0` containing `v`.
    pub rho1: f64,
    /// Radius of the ball around the iterate.
    pub rho2: f64,
    /// Minimum hidden row norm, unsquared.
    pub minw: f64,
    /// `(1/n) sum y_i^2`
    pub y_sq_mean: f64,
}

impl BoundInputs {
    /// Inputs measured from `params`: `rho1 = max(rho1_config, ||v - v0||)`
    /// and `minw` is the current minimum row norm.
    pub fn measure(params: &NetworkParams, rho1_config: f64, rho2: f64, y_sq_mean: f64) -> Self {
        let dims = params.dims();
        BoundInputs {
            m: dims.m,
            depth: dims.depth,
            phi0: params.activation().phi0_abs(),
            beta_phi: params.activation().beta_phi,
            rho1: rho1_config.max(params.output_radius()),
            rho2,
            minw: params.min_weight_norm(),
            y_sq_mean,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let nonneg = [
            self.phi0,
            self.beta_phi,
            self.rho1,
            self.rho2,
            self.y_sq_mean,
        ];
        if nonneg.iter().any(|v| !(*v >= 0.0)) || self.m == 0 || self.depth == 0 {
            return Err(Error::Precondition(format!(
                "invalid bound inputs {self:?}"
            )));
        }
        if !(self.minw > 0.0) {
            return Err(Error::Precondition(format!(
                "minw must be positive, got {}",
                self.minw
            )));
        }
        Ok(())
    }

    fn sqrt_m(&self) -> f64 {
        (self.m as f64).sqrt()
    }

    /// `a = 1/sqrt(m) + L |phi(0)|`
    fn a(&self) -> f64 {
        1.0 / self.sqrt_m() + self.depth as f64 * self.phi0
    }
}

/// `||alpha^(l)|| <= 1 + l |phi(0)| sqrt(m)`
pub fn layer_output_bound(l: usize, m: usize, phi0: f64) -> f64 {
    1.0 + l as f64 * phi0 * (m as f64).sqrt()
}

/// `rho_theta`, the bound on `||grad_theta f||`:
///
/// `rho^2 = (1 + L|phi0| sqrt(m))^2 + 4 (1+rho1)^2 sum_{l=1}^{L} (1/sqrt(m) + (l-1)|phi0|)^2 / minw^2`
pub fn grad_theta_bound(inp: &BoundInputs) -> f64 {
    let head = layer_output_bound(inp.depth, inp.m, inp.phi0);
    let tail: f64 = (1..=inp.depth)
        .map(|l| {
            let t = 1.0 / inp.sqrt_m() + (l - 1) as f64 * inp.phi0;
            t * t
        })
        .sum();
    let r = 1.0 + inp.rho1;
    (head * head + 4.0 * r * r * tail / (inp.minw * inp.minw)).sqrt()
}

/// `||grad_x f|| <= 1 + rho1`, independent of width and depth.
pub fn grad_x_bound(inp: &BoundInputs) -> f64 {
    1.0 + inp.rho1
}

/// Bound on `||d^2 f / dW^(l1) dW^(l2)||` for one pair of hidden layers.
pub fn hidden_pair_bound(inp: &BoundInputs) -> f64 {
    let a = inp.a();
    let b = inp.beta_phi;
    let l = inp.depth as f64;
    let bracket = 2.0 * (2.0 * b * a + 3.0) * a + 4.0 * a * (b * a + 1.0) + 4.0 * l * b * a * a;
    (1.0 + inp.rho1) * bracket / (inp.minw * inp.minw)
}

/// Bound on `||d^2 f / dW^(l) dv||`.
pub fn hidden_output_bound(inp: &BoundInputs) -> f64 {
    2.0 * inp.a() / inp.minw
}

/// `||grad^2_theta f||_2 <= L^2 B_hh + 2 L B_hv`, summing block norms over
/// the `L^2` hidden pairs and the `2L` hidden/output blocks
/// (`d^2 f / dv^2 = 0`).
pub fn hessian_bound(inp: &BoundInputs) -> f64 {
    let l = inp.depth as f64;
    l * l * hidden_pair_bound(inp) + 2.0 * l * hidden_output_bound(inp)
}

/// `|f| <= (1 + rho1)(1 + L|phi0| sqrt(m))`
pub fn predictor_output_bound(inp: &BoundInputs) -> f64 {
    (1.0 + inp.rho1) * layer_output_bound(inp.depth, inp.m, inp.phi0)
}

/// `varphi = (2/n) sum y_i^2 + 2 (1+rho1)^2 (1 + L|phi0| sqrt(m))^2`, a bound
/// on the empirical square loss.
pub fn loss_bound_varphi(inp: &BoundInputs) -> f64 {
    let f = predictor_output_bound(inp);
    2.0 * inp.y_sq_mean + 2.0 * f * f
}

/// `||grad L|| <= 2 rho_theta sqrt(varphi)`
pub fn loss_grad_bound(inp: &BoundInputs) -> f64 {
    2.0 * grad_theta_bound(inp) * loss_bound_varphi(inp).sqrt()
}

/// The sharper `||grad L|| <= 2 sqrt(L(theta)) rho_theta` at a known loss.
pub fn loss_grad_bound_at(loss: f64, inp: &BoundInputs) -> f64 {
    2.0 * loss.max(0.0).sqrt() * grad_theta_bound(inp)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub layer_output: Vec<f64>,
    pub predictor_abs: f64,
    pub grad_theta_rho: f64,
    pub grad_x: f64,
    pub hessian_spec: f64,
    pub loss_varphi: f64,
    pub loss_grad: f64,
}

impl BoundReport {
    pub fn new(inp: &BoundInputs) -> Result<Self> {
        inp.validate()?;
        Ok(BoundReport {
            layer_output: (0..=inp.depth)
                .map(|l| layer_output_bound(l, inp.m, inp.phi0))
                .collect(),
            predictor_abs: predictor_output_bound(inp),
            grad_theta_rho: grad_theta_bound(inp),
            grad_x: grad_x_bound(inp),
            hessian_spec: hessian_bound(inp),
            loss_varphi: loss_bound_varphi(inp),
            loss_grad: loss_grad_bound(inp),
        })
    }
}

/// One measured quantity against its bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dominance {
    pub quantity: String,
    pub measured: f64,
    pub bound: f64,
}

impl Dominance {
    pub fn holds(&self) -> bool {
        self.measured <= self.bound
    }

    /// `bound - measured`; negative on violation.
    pub fn margin(&self) -> f64 {
        self.bound - self.measured
    }
}

/// Settings for the optional Hessian measurement in [`check_dominance`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HessianProbe {
    /// Number of leading batch samples whose predictor Hessian is measured.
    pub samples: usize,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for HessianProbe {
    fn default() -> Self {
        HessianProbe {
            samples: 1,
            tol: 1e-7,
            max_iter: 2000,
        }
    }
}

/// Dominance entries for quantities already measured over a batch: the
/// worst per-sample `|f|`, `||grad_theta f||`, `||grad_x f||`, then `L` and
/// `||grad L||`.
pub fn dominance_from_stats(
    lg: &LossGrad,
    stats: &[SampleStats],
    inp: &BoundInputs,
) -> Result<Vec<Dominance>> {
    let report = BoundReport::new(inp)?;
    let worst = |f: fn(&SampleStats) -> f64| stats.iter().map(f).fold(0.0, f64::max);
    let grad_norm = norm(&lg.grad);
    Ok(vec![
        Dominance {
            quantity: "predictor_abs".into(),
            measured: worst(|s| s.output.abs()),
            bound: report.predictor_abs,
        },
        Dominance {
            quantity: "grad_theta".into(),
            measured: worst(|s| s.grad_theta_norm),
            bound: report.grad_theta_rho,
        },
        Dominance {
            quantity: "grad_x".into(),
            measured: worst(|s| s.grad_x_norm),
            bound: report.grad_x,
        },
        Dominance {
            quantity: "loss".into(),
            measured: lg.loss,
            bound: report.loss_varphi,
        },
        Dominance {
            quantity: "loss_grad_sharp".into(),
            measured: grad_norm,
            bound: loss_grad_bound_at(lg.loss, inp),
        },
        Dominance {
            quantity: "loss_grad".into(),
            measured: grad_norm,
            bound: report.loss_grad,
        },
    ])
}

/// Measures `|f|`, `||grad_theta f||`, `||grad_x f||` (worst over the batch),
/// `L`, `||grad L||` and optionally `||grad^2 f||` and compares each with its
/// closed-form bound. `||grad L||` is checked against both the sharp
/// `2 sqrt(L) rho` and the closed form `2 rho sqrt(varphi)`.
pub fn check_dominance(
    params: &NetworkParams,
    batch: &Batch<'_>,
    inp: &BoundInputs,
    hessian: Option<HessianProbe>,
) -> Result<Vec<Dominance>> {
    let (lg, stats) = batch_stats(params, batch)?;
    let mut out = dominance_from_stats(&lg, &stats, inp)?;
    if let Some(probe) = hessian {
        out.push(hessian_dominance(params, &batch.inputs, inp, probe)?);
    }
    Ok(out)
}

/// Largest power-iteration `||grad^2 f||` over the first `probe.samples`
/// inputs against [`hessian_bound`]. A non-converged run contributes its
/// last estimate.
pub fn hessian_dominance(
    params: &NetworkParams,
    inputs: &[&[f64]],
    inp: &BoundInputs,
    probe: HessianProbe,
) -> Result<Dominance> {
    let mut measured: f64 = 0.0;
    for x in inputs.iter().take(probe.samples) {
        let est = match hessian_spectral_norm(params, x, probe.tol, probe.max_iter) {
            Ok(e) => e.value,
            Err(Error::NotConverged { estimate, .. }) => estimate,
            Err(e) => return Err(e),
        };
        measured = measured.max(est);
    }
    Ok(Dominance {
        quantity: "hessian".into(),
        measured,
        bound: hessian_bound(inp),
    })
}
