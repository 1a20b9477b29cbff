//! WeightNorm feed-forward networks.
//!
//! Hidden unit `i` of layer `l` computes
//!
//! ```text
//! alpha_i^(l) = phi( (1/sqrt(m)) * <W_i^(l), alpha^(l-1)> / ||W_i^(l)|| )
//! ```
//!
//! with `alpha^(0) = x`, and the predictor is `f = <v, alpha^(L)>`. All hidden
//! layers share the width `m`. Layers are indexed from 0 in code: layer 0 is
//! the first hidden layer (`m x d`), layers `1..depth` are `m x m`.
//!
//! Parameters live in a single flat vector `theta` laid out as
//! `W^(1), ..., W^(L), v`, each matrix stored row-major so that every row
//! `W_i^(l)` is a contiguous slice.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::activation::ActivationSpec;
use crate::error::{Error, Result};
use crate::linalg::{dot, norm, sub};

/// Rows with a smaller Euclidean norm are treated as degenerate.
pub const EPS_ROW: f64 = 1e-8;

/// Tolerance on `| ||x|| - 1 |` for network inputs.
pub const UNIT_NORM_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    /// Input dimension.
    pub d: usize,
    /// Hidden width.
    pub m: usize,
    /// Number of hidden layers.
    pub depth: usize,
}

impl Dims {
    pub fn new(d: usize, m: usize, depth: usize) -> Result<Self> {
        if d == 0 || m == 0 || depth == 0 {
            return Err(Error::Dimension(format!(
                "d, m and depth must be positive (got d={d}, m={m}, depth={depth})"
            )));
        }
        Ok(Dims { d, m, depth })
    }

    /// `d*m + (depth-1)*m^2 + m`
    pub fn param_count(&self) -> usize {
        self.d * self.m + (self.depth - 1) * self.m * self.m + self.m
    }

    pub fn layer_inputs(&self, layer: usize) -> usize {
        if layer == 0 {
            self.d
        } else {
            self.m
        }
    }

    pub fn layer_offset(&self, layer: usize) -> usize {
        if layer == 0 {
            0
        } else {
            self.d * self.m + (layer - 1) * self.m * self.m
        }
    }

    pub fn layer_len(&self, layer: usize) -> usize {
        self.m * self.layer_inputs(layer)
    }

    pub fn v_offset(&self) -> usize {
        self.d * self.m + (self.depth - 1) * self.m * self.m
    }

    pub fn row_range(&self, layer: usize, row: usize) -> std::ops::Range<usize> {
        let n_in = self.layer_inputs(layer);
        let start = self.layer_offset(layer) + row * n_in;
        start..start + n_in
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum InitScheme {
    /// Entries i.i.d. uniform on `[-scale/sqrt(m), scale/sqrt(m)]`.
    Uniform { scale: f64 },
    /// Entries i.i.d. `N(0, sigma^2)`.
    Gaussian { sigma: f64 },
}

impl InitScheme {
    fn sample_row(&self, rng: &mut ChaCha8Rng, m: usize, out: &mut [f64]) {
        match *self {
            InitScheme::Uniform { scale } => {
                let c = scale / (m as f64).sqrt();
                let dist = Uniform::new_inclusive(-c, c).expect("finite uniform bounds");
                out.iter_mut().for_each(|w| *w = dist.sample(rng));
            }
            InitScheme::Gaussian { sigma } => {
                let dist = Normal::new(0.0, sigma).expect("finite sigma");
                out.iter_mut().for_each(|w| *w = dist.sample(rng));
            }
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            InitScheme::Uniform { scale } => scale.is_finite() && scale > 0.0,
            InitScheme::Gaussian { sigma } => sigma.is_finite() && sigma > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Precondition(format!("invalid init scheme {self:?}")))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    dims: Dims,
    theta: Vec<f64>,
    v0: Vec<f64>,
    activation: ActivationSpec,
}

/// Intermediate values of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub x: Vec<f64>,
    /// Pre-activations, one vector per hidden layer.
    pub preacts: Vec<Vec<f64>>,
    /// Activations, one vector per hidden layer; `acts[k]` is the output of
    /// hidden layer `k` (0-based).
    pub acts: Vec<Vec<f64>>,
    pub output: f64,
    /// Row norms `||W_i||` per layer.
    pub row_norms: Vec<Vec<f64>>,
    /// Raw inner products `<W_i, alpha^(l-1)>` per layer.
    pub dots: Vec<Vec<f64>>,
}

impl ForwardTrace {
    /// Input of hidden layer `layer`.
    pub fn layer_input(&self, layer: usize) -> &[f64] {
        if layer == 0 {
            &self.x
        } else {
            &self.acts[layer - 1]
        }
    }
}

pub fn make_network(
    dims: Dims,
    activation: ActivationSpec,
    init: InitScheme,
    seed: u64,
) -> Result<NetworkParams> {
    init.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut theta = vec![0.0; dims.param_count()];
    for layer in 0..dims.depth {
        for row in 0..dims.m {
            let range = dims.row_range(layer, row);
            loop {
                init.sample_row(&mut rng, dims.m, &mut theta[range.clone()]);
                if norm(&theta[range.clone()]) > EPS_ROW {
                    break;
                }
            }
        }
    }
    let v0 = random_unit_vector(&mut rng, dims.m);
    theta[dims.v_offset()..].copy_from_slice(&v0);
    Ok(NetworkParams {
        dims,
        theta,
        v0,
        activation,
    })
}

pub(crate) fn random_unit_vector<R: Rng>(rng: &mut R, len: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..len).map(|_| rng.sample(StandardNormal)).collect();
        let n = norm(&v);
        if n > 1e-12 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

pub fn forward(params: &NetworkParams, x: &[f64]) -> Result<ForwardTrace> {
    params.forward(x)
}

pub fn min_weight_norm(params: &NetworkParams) -> f64 {
    params.min_weight_norm()
}

pub fn flatten(params: &NetworkParams) -> Vec<f64> {
    params.flatten()
}

pub fn unflatten(
    theta: &[f64],
    dims: Dims,
    activation: ActivationSpec,
    v0: &[f64],
) -> Result<NetworkParams> {
    NetworkParams::from_parts(dims, theta.to_vec(), v0.to_vec(), activation)
}

pub fn check_unit(x: &[f64]) -> Result<()> {
    let n = norm(x);
    if (n - 1.0).abs() > UNIT_NORM_TOL || !n.is_finite() {
        return Err(Error::NonUnitInput { norm: n });
    }
    Ok(())
}

impl NetworkParams {
    /// Assembles parameters from a flat `theta`. Row norms are not checked
    /// here; degenerate rows surface as errors in [`forward`].
    pub fn from_parts(
        dims: Dims,
        theta: Vec<f64>,
        v0: Vec<f64>,
        activation: ActivationSpec,
    ) -> Result<Self> {
        if theta.len() != dims.param_count() {
            return Err(Error::Dimension(format!(
                "theta has length {} but dims {:?} need {}",
                theta.len(),
                dims,
                dims.param_count()
            )));
        }
        if v0.len() != dims.m {
            return Err(Error::Dimension(format!(
                "v0 has length {} but width is {}",
                v0.len(),
                dims.m
            )));
        }
        Ok(NetworkParams {
            dims,
            theta,
            v0,
            activation,
        })
    }

    /// Same network structure (dims, activation, `v0`) with new parameters.
    pub fn with_theta(&self, theta: &[f64]) -> Result<Self> {
        Self::from_parts(self.dims, theta.to_vec(), self.v0.clone(), self.activation)
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn activation(&self) -> &ActivationSpec {
        &self.activation
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn theta_mut(&mut self) -> &mut [f64] {
        &mut self.theta
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.theta.clone()
    }

    /// Row-major `m x n_in` block of hidden layer `layer`.
    pub fn layer(&self, layer: usize) -> &[f64] {
        let off = self.dims.layer_offset(layer);
        &self.theta[off..off + self.dims.layer_len(layer)]
    }

    pub fn row(&self, layer: usize, row: usize) -> &[f64] {
        &self.theta[self.dims.row_range(layer, row)]
    }

    pub fn row_mut(&mut self, layer: usize, row: usize) -> &mut [f64] {
        let range = self.dims.row_range(layer, row);
        &mut self.theta[range]
    }

    pub fn v(&self) -> &[f64] {
        &self.theta[self.dims.v_offset()..]
    }

    pub fn v_mut(&mut self) -> &mut [f64] {
        let off = self.dims.v_offset();
        &mut self.theta[off..]
    }

    pub fn v0(&self) -> &[f64] {
        &self.v0
    }

    /// `||v - v0||`
    pub fn output_radius(&self) -> f64 {
        norm(&sub(self.v(), &self.v0))
    }

    /// Smallest hidden row norm `min_{i,l} ||W_i^(l)||` (not squared).
    pub fn min_weight_norm(&self) -> f64 {
        (0..self.dims.depth)
            .flat_map(|l| (0..self.dims.m).map(move |i| (l, i)))
            .map(|(l, i)| norm(self.row(l, i)))
            .fold(f64::INFINITY, f64::min)
    }

    /// Multiplies every hidden row by `c`, leaving the predictor unchanged.
    pub fn scale_hidden_rows(&mut self, c: f64) {
        let end = self.dims.v_offset();
        self.theta[..end].iter_mut().for_each(|w| *w *= c);
    }

    /// Rescales every hidden row to Euclidean norm `target`.
    pub fn set_row_norms(&mut self, target: f64) {
        for l in 0..self.dims.depth {
            for i in 0..self.dims.m {
                let row = self.row_mut(l, i);
                let n = norm(row);
                if n > 0.0 {
                    row.iter_mut().for_each(|w| *w *= target / n);
                }
            }
        }
    }

    pub fn forward(&self, x: &[f64]) -> Result<ForwardTrace> {
        check_unit(x)?;
        self.forward_unchecked(x)
    }

    /// Forward pass without the unit-norm check on `x`, for finite
    /// differences in input space. The bounds assume unit inputs.
    pub fn forward_unchecked(&self, x: &[f64]) -> Result<ForwardTrace> {
        let dims = self.dims;
        if x.len() != dims.d {
            return Err(Error::Dimension(format!(
                "input has length {} but d = {}",
                x.len(),
                dims.d
            )));
        }
        let inv_sqrt_m = 1.0 / (dims.m as f64).sqrt();
        let mut preacts = Vec::with_capacity(dims.depth);
        let mut acts: Vec<Vec<f64>> = Vec::with_capacity(dims.depth);
        let mut row_norms = Vec::with_capacity(dims.depth);
        let mut dots = Vec::with_capacity(dims.depth);
        for layer in 0..dims.depth {
            let input: &[f64] = if layer == 0 { x } else { &acts[layer - 1] };
            let mut z = Vec::with_capacity(dims.m);
            let mut r = Vec::with_capacity(dims.m);
            let mut s = Vec::with_capacity(dims.m);
            for i in 0..dims.m {
                let row = self.row(layer, i);
                let rn = norm(row);
                if rn.is_nan() || rn < EPS_ROW {
                    return Err(Error::DegenerateRow {
                        layer,
                        row: i,
                        norm: rn,
                    });
                }
                let si = dot(row, input);
                z.push(inv_sqrt_m * si / rn);
                r.push(rn);
                s.push(si);
            }
            let a: Vec<f64> = z.iter().map(|&zi| self.activation.phi(zi)).collect();
            preacts.push(z);
            acts.push(a);
            row_norms.push(r);
            dots.push(s);
        }
        let output = dot(self.v(), &acts[dims.depth - 1]);
        Ok(ForwardTrace {
            x: x.to_vec(),
            preacts,
            acts,
            output,
            row_norms,
            dots,
        })
    }

    /// Predictor value only.
    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        Ok(self.forward(x)?.output)
    }
}
