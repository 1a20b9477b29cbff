//! Generalization bound for the square loss, measured train/held-out gap and
//! a Monte-Carlo lower estimate of the Rademacher complexity of the
//! constrained WeightNorm class.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::activation::ActivationSpec;
use crate::deriv::{loss, Batch};
use crate::error::{Error, Result};
use crate::linalg::{dot, norm};
use crate::net::{make_network, random_unit_vector, Dims, InitScheme, NetworkParams};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenInputs {
    pub rho1: f64,
    pub depth: usize,
    pub n: usize,
    pub delta: f64,
}

impl GenInputs {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.depth == 0 {
            return Err(Error::Precondition("n and depth must be positive".into()));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::Precondition(format!(
                "delta must lie in (0, 1), got {}",
                self.delta
            )));
        }
        if !(self.rho1 >= 0.0) {
            return Err(Error::Precondition(format!(
                "rho1 must be nonnegative, got {}",
                self.rho1
            )));
        }
        Ok(())
    }
}

/// Tolerance on `|phi(0)|` for the zero-at-origin precondition.
pub const PHI0_TOL: f64 = 1e-12;

fn require_zero_at_origin(activation: &ActivationSpec) -> Result<()> {
    if activation.phi0_abs() > PHI0_TOL {
        return Err(Error::Precondition(format!(
            "activation {} has phi(0) = {}, the bound needs phi(0) = 0",
            activation.kind, activation.phi0
        )));
    }
    Ok(())
}

/// `(1 + rho1)(sqrt(2 ln2 L) + 1) / sqrt(n)`
pub fn rademacher_bound(rho1: f64, depth: usize, n: usize) -> f64 {
    (1.0 + rho1) * ((2.0 * std::f64::consts::LN_2 * depth as f64).sqrt() + 1.0) / (n as f64).sqrt()
}

/// Lipschitz constant `lambda = 2(2 + rho1)` of the square loss in the prediction.
pub fn loss_lipschitz(rho1: f64) -> f64 {
    2.0 * (2.0 + rho1)
}

/// Range constant `B = 2(1 + (1 + rho1)^2)` of the square loss.
pub fn loss_range(rho1: f64) -> f64 {
    2.0 * (1.0 + (1.0 + rho1).powi(2))
}

/// `2 lambda R_n + B sqrt(2 ln(2/delta) / n)`, i.e.
/// `4(2+rho1)(1+rho1)(sqrt(2 ln2 L)+1)/sqrt(n) + 2(1+(1+rho1)^2) sqrt(2 ln(2/delta))/sqrt(n)`.
pub fn generalization_bound(inp: &GenInputs, activation: &ActivationSpec) -> Result<f64> {
    inp.validate()?;
    require_zero_at_origin(activation)?;
    let sqrt_n = (inp.n as f64).sqrt();
    let complexity = 2.0 * loss_lipschitz(inp.rho1) * rademacher_bound(inp.rho1, inp.depth, inp.n);
    let confidence = loss_range(inp.rho1) * (2.0 * (2.0 / inp.delta).ln()).sqrt() / sqrt_n;
    Ok(complexity + confidence)
}

/// `L_heldout - L_train`; may be negative.
pub fn empirical_gap(
    params: &NetworkParams,
    train: &Batch<'_>,
    heldout: &Batch<'_>,
) -> Result<f64> {
    Ok(loss(params, heldout)? - loss(params, train)?)
}

/// Largest `|dl/dy_hat| = 2|y_hat - y|` over a batch, to compare with
/// [`loss_lipschitz`].
pub fn max_loss_slope(params: &NetworkParams, batch: &Batch<'_>) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let mut worst: f64 = 0.0;
    for (x, y) in batch.iter() {
        worst = worst.max(2.0 * (params.predict(x)? - y).abs());
    }
    Ok(worst)
}

/// Draws members of the constrained class: hidden rows from `init`, `v`
/// uniform in the ball of radius `rho1` around `v0`.
#[derive(Debug, Clone)]
pub struct FamilySampler {
    pub dims: Dims,
    pub activation: ActivationSpec,
    pub init: InitScheme,
    pub rho1: f64,
    pub seed: u64,
}

impl FamilySampler {
    /// Member `j`; `v0` is the one drawn by [`make_network`] for that seed.
    pub fn sample(&self, j: u64) -> Result<NetworkParams> {
        let seed = self
            .seed
            .wrapping_mul(0x9e37_79b9_7f4a_7c15)
            .wrapping_add(j);
        let mut params = make_network(self.dims, self.activation, self.init, seed)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xb1a5);
        let dir = random_unit_vector(&mut rng, self.dims.m);
        let r = self.rho1 * rng.random::<f64>().powf(1.0 / self.dims.m as f64);
        let v0 = params.v0().to_vec();
        for ((v, v0), d) in params.v_mut().iter_mut().zip(&v0).zip(&dir) {
            *v = v0 + r * d;
        }
        Ok(params)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RademacherConfig {
    /// Sign vectors `K`.
    pub sign_draws: usize,
    /// Family members `J`.
    pub nets: usize,
    pub seed: u64,
    /// Replace each member's `v` by the maximizer over the `rho1` ball (exact
    /// since `f` is linear in `v`). Tighter, still a lower estimate.
    pub sup_over_v: bool,
}

impl Default for RademacherConfig {
    fn default() -> Self {
        RademacherConfig {
            sign_draws: 32,
            nets: 8,
            seed: 0,
            sup_over_v: false,
        }
    }
}

/// Mean over `K` sign vectors of the max over `J` sampled members of
/// `|(1/n) sum eps_i f(x_i)|`. Restricting the sup makes this a lower
/// estimate of `R_n(F)`.
pub fn rademacher_lower_estimate(
    data: &[Vec<f64>],
    sampler: &FamilySampler,
    cfg: &RademacherConfig,
) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if cfg.sign_draws == 0 || cfg.nets == 0 {
        return Err(Error::Precondition(
            "need at least one sign draw and one net".into(),
        ));
    }
    require_zero_at_origin(&sampler.activation)?;
    let n = data.len() as f64;
    // Last hidden activations and outputs per member, reused across sign draws.
    let mut members = Vec::with_capacity(cfg.nets);
    for j in 0..cfg.nets {
        let p = sampler.sample(j as u64)?;
        let mut feats = Vec::with_capacity(data.len());
        for x in data {
            let t = p.forward(x)?;
            feats.push(t.acts[sampler.dims.depth - 1].clone());
        }
        members.push((p, feats));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut total = 0.0;
    let mut s = vec![0.0; sampler.dims.m];
    for _ in 0..cfg.sign_draws {
        let eps: Vec<f64> = (0..data.len())
            .map(|_| if rng.random_bool(0.5) { 1.0 } else { -1.0 })
            .collect();
        let mut best: f64 = 0.0;
        for (p, feats) in &members {
            s.iter_mut().for_each(|v| *v = 0.0);
            for (e, a) in eps.iter().zip(feats) {
                for (si, ai) in s.iter_mut().zip(a) {
                    *si += e * ai / n;
                }
            }
            let value = if cfg.sup_over_v {
                dot(p.v0(), &s).abs() + sampler.rho1 * norm(&s)
            } else {
                dot(p.v(), &s).abs()
            };
            best = best.max(value);
        }
        total += best;
    }
    Ok(total / cfg.sign_draws as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenReport {
    pub bound: f64,
    pub gap: f64,
    pub rademacher_lower: f64,
    pub n: usize,
    #[serde(rename = "L")]
    pub depth: usize,
    pub rho1: f64,
    pub delta: f64,
}
