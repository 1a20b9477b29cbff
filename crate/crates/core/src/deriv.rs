//! First-order derivatives of the predictor and of the square loss, a
//! central-difference oracle, Hessian-vector products and power-iteration
//! estimates of the predictor Hessian's spectral norm.
//!
//! The row derivative of a normalized unit is
//!
//! ```text
//! d z_i / d W_i = (1/sqrt(m)) * ( a / ||W_i||  -  <W_i, a> W_i / ||W_i||^3 )
//! ```
//!
//! which is orthogonal to `W_i`: the predictor is invariant to rescaling a row.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{axpy, dot, norm};
use crate::net::{random_unit_vector, Dims, ForwardTrace, NetworkParams};

/// Gradient of the predictor w.r.t. all parameters, in `theta` layout.
#[derive(Debug, Clone, PartialEq)]
pub struct GradTheta {
    dims: Dims,
    flat: Vec<f64>,
}

impl GradTheta {
    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.flat.clone()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.flat
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.flat
    }

    /// `df/dW^(layer)`, row-major.
    pub fn layer(&self, layer: usize) -> &[f64] {
        let off = self.dims.layer_offset(layer);
        &self.flat[off..off + self.dims.layer_len(layer)]
    }

    pub fn row(&self, layer: usize, row: usize) -> &[f64] {
        &self.flat[self.dims.row_range(layer, row)]
    }

    /// `df/dv = alpha^(L)`
    pub fn v(&self) -> &[f64] {
        &self.flat[self.dims.v_offset()..]
    }

    pub fn norm(&self) -> f64 {
        norm(&self.flat)
    }
}

/// Mean square loss over a batch and its gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct LossGrad {
    pub loss: f64,
    pub grad: Vec<f64>,
}

/// A borrowed set of `(x_i, y_i)` pairs.
#[derive(Debug, Clone)]
pub struct Batch<'a> {
    pub inputs: Vec<&'a [f64]>,
    pub targets: Vec<f64>,
}

impl<'a> Batch<'a> {
    pub fn new(inputs: Vec<&'a [f64]>, targets: Vec<f64>) -> Result<Self> {
        if inputs.len() != targets.len() {
            return Err(Error::Dimension(format!(
                "{} inputs but {} targets",
                inputs.len(),
                targets.len()
            )));
        }
        Ok(Batch { inputs, targets })
    }

    pub fn from_rows(inputs: &'a [Vec<f64>], targets: &[f64]) -> Result<Self> {
        Self::new(inputs.iter().map(Vec::as_slice).collect(), targets.to_vec())
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[f64], f64)> + '_ {
        self.inputs
            .iter()
            .copied()
            .zip(self.targets.iter().copied())
    }

    /// `(1/n) sum y_i^2`
    pub fn y_sq_mean(&self) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        self.targets.iter().map(|y| y * y).sum::<f64>() / self.len() as f64
    }
}

/// Reverse pass for one sample. Adds `coeff * df/dtheta` into `out` (when
/// given) and returns `df/dx`.
fn backprop(
    params: &NetworkParams,
    trace: &ForwardTrace,
    coeff: f64,
    mut out: Option<&mut [f64]>,
) -> Vec<f64> {
    let dims = params.dims();
    let act = params.activation();
    let inv_sqrt_m = 1.0 / (dims.m as f64).sqrt();
    if let Some(out) = out.as_deref_mut() {
        axpy(
            coeff,
            &trace.acts[dims.depth - 1],
            &mut out[dims.v_offset()..],
        );
    }
    let mut delta = params.v().to_vec();
    for layer in (0..dims.depth).rev() {
        let input = trace.layer_input(layer);
        let n_in = input.len();
        let mut next = vec![0.0; n_in];
        #[allow(clippy::needless_range_loop)]
        for i in 0..dims.m {
            let row = params.row(layer, i);
            let r = trace.row_norms[layer][i];
            let s = trace.dots[layer][i];
            // df/dz_i scaled by the 1/sqrt(m) factor shared by every term
            let g = delta[i] * act.dphi(trace.preacts[layer][i]) * inv_sqrt_m;
            if g == 0.0 {
                continue;
            }
            if let Some(out) = out.as_deref_mut() {
                let range = dims.row_range(layer, i);
                let block = &mut out[range];
                let c1 = coeff * g / r;
                let c2 = coeff * g * s / (r * r * r);
                for j in 0..n_in {
                    block[j] += c1 * input[j] - c2 * row[j];
                }
            }
            axpy(g / r, row, &mut next);
        }
        delta = next;
    }
    delta
}

/// Predictor value, `df/dtheta` and `df/dx` in one pass.
pub fn predictor_derivatives(
    params: &NetworkParams,
    x: &[f64],
) -> Result<(f64, GradTheta, Vec<f64>)> {
    let trace = params.forward(x)?;
    let dims = params.dims();
    let mut flat = vec![0.0; dims.param_count()];
    let gx = backprop(params, &trace, 1.0, Some(&mut flat));
    Ok((trace.output, GradTheta { dims, flat }, gx))
}

pub fn grad_theta(params: &NetworkParams, x: &[f64]) -> Result<GradTheta> {
    Ok(predictor_derivatives(params, x)?.1)
}

pub fn grad_x(params: &NetworkParams, x: &[f64]) -> Result<Vec<f64>> {
    let trace = params.forward(x)?;
    Ok(backprop(params, &trace, 1.0, None))
}

/// `L = (1/n) sum (y_i - f(x_i))^2` and `grad L = (1/n) sum l'_i grad f_i`
/// with `l'_i = -2 (y_i - f(x_i))`. Samples are reduced in batch order.
pub fn loss_and_grad(params: &NetworkParams, batch: &Batch<'_>) -> Result<LossGrad> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let n = batch.len() as f64;
    let mut grad = vec![0.0; params.dims().param_count()];
    let mut loss = 0.0;
    for (x, y) in batch.iter() {
        let trace = params.forward(x)?;
        let resid = y - trace.output;
        loss += resid * resid;
        backprop(params, &trace, -2.0 * resid / n, Some(&mut grad));
    }
    Ok(LossGrad {
        loss: loss / n,
        grad,
    })
}

/// Loss only.
pub fn loss(params: &NetworkParams, batch: &Batch<'_>) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let mut total = 0.0;
    for (x, y) in batch.iter() {
        let r = y - params.predict(x)?;
        total += r * r;
    }
    Ok(total / batch.len() as f64)
}

/// Per-sample quantities that the closed-form bounds must dominate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleStats {
    pub output: f64,
    pub grad_theta_norm: f64,
    pub grad_x_norm: f64,
}

/// Loss, loss gradient and per-sample statistics in one sweep.
pub fn batch_stats(
    params: &NetworkParams,
    batch: &Batch<'_>,
) -> Result<(LossGrad, Vec<SampleStats>)> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let dims = params.dims();
    let n = batch.len() as f64;
    let mut grad = vec![0.0; dims.param_count()];
    let mut sample = vec![0.0; dims.param_count()];
    let mut loss = 0.0;
    let mut stats = Vec::with_capacity(batch.len());
    for (x, y) in batch.iter() {
        let trace = params.forward(x)?;
        sample.iter_mut().for_each(|g| *g = 0.0);
        let gx = backprop(params, &trace, 1.0, Some(&mut sample));
        let resid = y - trace.output;
        loss += resid * resid;
        axpy(-2.0 * resid / n, &sample, &mut grad);
        stats.push(SampleStats {
            output: trace.output,
            grad_theta_norm: norm(&sample),
            grad_x_norm: norm(&gx),
        });
    }
    Ok((
        LossGrad {
            loss: loss / n,
            grad,
        },
        stats,
    ))
}

/// Central differences `(f(t + h e_k) - f(t - h e_k)) / 2h` per coordinate.
pub fn fd_grad_oracle<F>(f: F, theta: &[f64], h: f64) -> Vec<f64>
where
    F: Fn(&[f64]) -> f64,
{
    let mut probe = theta.to_vec();
    (0..theta.len())
        .map(|k| {
            let orig = probe[k];
            probe[k] = orig + h;
            let up = f(&probe);
            probe[k] = orig - h;
            let down = f(&probe);
            probe[k] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Scale-aware step for [`hvp`]: `1e-4 * (1 + ||theta||) / ||u||`.
pub fn default_hvp_step(theta: &[f64], u: &[f64]) -> f64 {
    let un = norm(u);
    if un == 0.0 {
        return 1e-4;
    }
    1e-4 * (1.0 + norm(theta)) / un
}

/// Hessian-vector product `(grad f(theta + h u) - grad f(theta - h u)) / 2h`
/// built from the analytic gradient.
pub fn hvp(params: &NetworkParams, x: &[f64], u: &[f64], h: f64) -> Result<Vec<f64>> {
    if !(h > 0.0) || !h.is_finite() {
        return Err(Error::InvalidStep(h));
    }
    let p = params.dims().param_count();
    if u.len() != p {
        return Err(Error::Dimension(format!(
            "direction has length {} but theta has {p}",
            u.len()
        )));
    }
    if u.iter().all(|&ui| ui == 0.0) {
        return Ok(vec![0.0; p]);
    }
    let theta = params.theta();
    let plus: Vec<f64> = theta.iter().zip(u).map(|(t, ui)| t + h * ui).collect();
    let minus: Vec<f64> = theta.iter().zip(u).map(|(t, ui)| t - h * ui).collect();
    let gp = grad_theta(&params.with_theta(&plus)?, x)?.into_vec();
    let gm = grad_theta(&params.with_theta(&minus)?, x)?.into_vec();
    Ok(gp
        .iter()
        .zip(&gm)
        .map(|(a, b)| (a - b) / (2.0 * h))
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectralEstimate {
    /// Estimate of `max |lambda|`.
    pub value: f64,
    /// Rayleigh quotient at the final iterate; its sign tells which end of
    /// the spectrum dominates.
    pub rayleigh: f64,
    pub iterations: usize,
}

/// Seed of the random start vectors used by [`hessian_spectral_norm`].
pub const POWER_ITERATION_SEED: u64 = 0x5eed_1234;

/// Number of independent starts (one initial run plus two restarts).
pub const POWER_ITERATION_STARTS: usize = 3;

/// `||grad^2_theta f(theta; x)||_2` by power iteration on Hessian-vector
/// products. Each step reports `||H u||` for the current unit `u`, which
/// converges to `max |lambda|` even when `lambda` and `-lambda` tie.
/// Convergence means relative change below `tol`; the largest converged
/// estimate over all starts is returned.
pub fn hessian_spectral_norm(
    params: &NetworkParams,
    x: &[f64],
    tol: f64,
    max_iter: usize,
) -> Result<SpectralEstimate> {
    hessian_spectral_norm_seeded(params, x, tol, max_iter, POWER_ITERATION_SEED)
}

pub fn hessian_spectral_norm_seeded(
    params: &NetworkParams,
    x: &[f64],
    tol: f64,
    max_iter: usize,
    seed: u64,
) -> Result<SpectralEstimate> {
    if !(tol > 0.0) {
        return Err(Error::Precondition(format!(
            "tol must be positive, got {tol}"
        )));
    }
    params.forward(x)?;
    let p = params.dims().param_count();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<SpectralEstimate> = None;
    for _ in 0..POWER_ITERATION_STARTS {
        let start = random_unit_vector(&mut rng, p);
        let run = power_run(params, x, start, tol, max_iter)?;
        if best.is_none_or(|b| run.value > b.value) {
            best = Some(run);
        }
    }
    Ok(best.expect("at least one start"))
}

fn power_run(
    params: &NetworkParams,
    x: &[f64],
    mut u: Vec<f64>,
    tol: f64,
    max_iter: usize,
) -> Result<SpectralEstimate> {
    let theta = params.theta();
    let mut prev = f64::NAN;
    let mut rayleigh = 0.0;
    for it in 1..=max_iter {
        let h = default_hvp_step(theta, &u);
        let hu = hvp(params, x, &u, h)?;
        let est = norm(&hu);
        rayleigh = dot(&u, &hu);
        // an (almost) exactly flat direction: curvature is zero to rounding
        if est <= 1e-300 {
            return Ok(SpectralEstimate {
                value: 0.0,
                rayleigh: 0.0,
                iterations: it,
            });
        }
        if (est - prev).abs() <= tol * est {
            return Ok(SpectralEstimate {
                value: est,
                rayleigh,
                iterations: it,
            });
        }
        prev = est;
        u = hu.into_iter().map(|v| v / est).collect();
    }
    Err(Error::NotConverged {
        estimate: if prev.is_nan() { rayleigh.abs() } else { prev },
        iterations: max_iter,
    })
}

/// Explicit `d alpha^(l) / d alpha^(l-1)` for hidden layer `layer` (0-based),
/// as a row-major `m x n_in` matrix with entries
/// `(1/sqrt(m)) phi'(z_i) W_ij / ||W_i||`.
#[derive(Debug, Clone, PartialEq)]
pub struct Jacobian {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Jacobian {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    /// `J^T y`
    pub fn transpose_mul(&self, y: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for (yi, row) in y.iter().zip(self.data.chunks_exact(self.cols)) {
            axpy(*yi, row, &mut out);
        }
        out
    }
}

pub fn layer_jacobian(params: &NetworkParams, x: &[f64], layer: usize) -> Result<Jacobian> {
    let dims = params.dims();
    if layer >= dims.depth {
        return Err(Error::Dimension(format!(
            "layer {layer} out of range for depth {}",
            dims.depth
        )));
    }
    let trace = params.forward(x)?;
    let n_in = dims.layer_inputs(layer);
    let inv_sqrt_m = 1.0 / (dims.m as f64).sqrt();
    let mut data = Vec::with_capacity(dims.m * n_in);
    for i in 0..dims.m {
        let c = inv_sqrt_m * params.activation().dphi(trace.preacts[layer][i])
            / trace.row_norms[layer][i];
        data.extend(params.row(layer, i).iter().map(|w| c * w));
    }
    Ok(Jacobian {
        rows: dims.m,
        cols: n_in,
        data,
    })
}
