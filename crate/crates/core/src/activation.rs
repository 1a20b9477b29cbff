//! Smooth pointwise activations together with the constants the curvature
//! bounds consume: `phi(0)`, the smoothness constant `beta_phi` (a uniform
//! bound on `|phi''|`) and the Lipschitz constant (a uniform bound on `|phi'|`).

use std::f64::consts::{FRAC_1_SQRT_2, PI};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Interval searched when a constant has to be found numerically.
pub const SEARCH_RANGE: (f64, f64) = (-20.0, 20.0);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActivationKind {
    Tanh,
    Gelu,
    Custom,
}

impl fmt::Display for ActivationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ActivationKind::Tanh => "tanh",
            ActivationKind::Gelu => "gelu",
            ActivationKind::Custom => "custom",
        })
    }
}

pub type ScalarFn = fn(f64) -> f64;

#[derive(Clone, Copy)]
pub struct ActivationSpec {
    pub kind: ActivationKind,
    pub eval: ScalarFn,
    pub deriv1: ScalarFn,
    pub deriv2: ScalarFn,
    /// `phi(0)`, signed.
    pub phi0: f64,
    pub beta_phi: f64,
    pub lipschitz: f64,
}

impl fmt::Debug for ActivationSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ActivationSpec")
            .field("kind", &self.kind)
            .field("phi0", &self.phi0)
            .field("beta_phi", &self.beta_phi)
            .field("lipschitz", &self.lipschitz)
            .finish()
    }
}

impl PartialEq for ActivationSpec {
    fn eq(&self, other: &Self) -> bool {
        self.kind == other.kind
            && self.phi0.to_bits() == other.phi0.to_bits()
            && self.beta_phi.to_bits() == other.beta_phi.to_bits()
            && self.lipschitz.to_bits() == other.lipschitz.to_bits()
    }
}

fn tanh(z: f64) -> f64 {
    z.tanh()
}

fn tanh_d1(z: f64) -> f64 {
    let t = z.tanh();
    1.0 - t * t
}

fn tanh_d2(z: f64) -> f64 {
    let t = z.tanh();
    -2.0 * t * (1.0 - t * t)
}

fn std_normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * PI).sqrt()
}

fn std_normal_cdf(z: f64) -> f64 {
    0.5 * (1.0 + libm::erf(z * FRAC_1_SQRT_2))
}

/// Exact GELU, `z * Phi(z)`.
fn gelu(z: f64) -> f64 {
    z * std_normal_cdf(z)
}

fn gelu_d1(z: f64) -> f64 {
    std_normal_cdf(z) + z * std_normal_pdf(z)
}

fn gelu_d2(z: f64) -> f64 {
    std_normal_pdf(z) * (2.0 - z * z)
}

impl ActivationSpec {
    pub fn tanh() -> Self {
        ActivationSpec {
            kind: ActivationKind::Tanh,
            eval: tanh,
            deriv1: tanh_d1,
            deriv2: tanh_d2,
            phi0: 0.0,
            // max |tanh''| is attained where tanh = 1/sqrt(3)
            beta_phi: 4.0 / (3.0 * 3f64.sqrt()),
            lipschitz: 1.0,
        }
    }

    /// Exact (erf-based) GELU. `beta_phi` and the Lipschitz constant are
    /// found by numeric maximization over [`SEARCH_RANGE`].
    ///
    /// GELU is not globally 1-Lipschitz (`sup |phi'| ~ 1.129`, attained near
    /// `z ~ 2.42`); the `lipschitz` field records the true value.
    pub fn gelu() -> Self {
        ActivationSpec {
            kind: ActivationKind::Gelu,
            eval: gelu,
            deriv1: gelu_d1,
            deriv2: gelu_d2,
            phi0: 0.0,
            beta_phi: max_abs(gelu_d2, SEARCH_RANGE),
            lipschitz: max_abs(gelu_d1, SEARCH_RANGE),
        }
    }

    /// User-supplied activation; all constants are derived numerically.
    pub fn custom(eval: ScalarFn, deriv1: ScalarFn, deriv2: ScalarFn) -> Self {
        ActivationSpec {
            kind: ActivationKind::Custom,
            eval,
            deriv1,
            deriv2,
            phi0: eval(0.0),
            beta_phi: max_abs(deriv2, SEARCH_RANGE),
            lipschitz: max_abs(deriv1, SEARCH_RANGE),
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        match name.trim().to_ascii_lowercase().as_str() {
            "tanh" => Ok(Self::tanh()),
            "gelu" => Ok(Self::gelu()),
            other => Err(Error::Precondition(format!("unknown activation '{other}'"))),
        }
    }

    #[inline]
    pub fn phi(&self, z: f64) -> f64 {
        (self.eval)(z)
    }

    #[inline]
    pub fn dphi(&self, z: f64) -> f64 {
        (self.deriv1)(z)
    }

    #[inline]
    pub fn d2phi(&self, z: f64) -> f64 {
        (self.deriv2)(z)
    }

    pub fn phi0_abs(&self) -> f64 {
        self.phi0.abs()
    }

    pub fn is_one_lipschitz(&self) -> bool {
        self.lipschitz <= 1.0
    }

    /// Checks the declared constants and the derivative callbacks against a
    /// set of sample points. Derivatives are compared with central
    /// differences (`h = 1e-5`) using the mixed error `|fd - an| / (1 + |an|)`.
    pub fn validate(&self, grid: &[f64]) -> Result<()> {
        if self.phi(0.0) != self.phi0 {
            return Err(Error::Precondition(format!(
                "{}: eval(0) = {} but phi0 = {}",
                self.kind,
                self.phi(0.0),
                self.phi0
            )));
        }
        let h = 1e-5;
        for &z in grid {
            let d1 = self.dphi(z);
            let d2 = self.d2phi(z);
            if d1.abs() > self.lipschitz * (1.0 + 1e-12) {
                return Err(Error::Precondition(format!(
                    "{}: |phi'({z})| = {} exceeds Lipschitz constant {}",
                    self.kind,
                    d1.abs(),
                    self.lipschitz
                )));
            }
            if d2.abs() > self.beta_phi * (1.0 + 1e-12) {
                return Err(Error::Precondition(format!(
                    "{}: |phi''({z})| = {} exceeds beta_phi {}",
                    self.kind,
                    d2.abs(),
                    self.beta_phi
                )));
            }
            let fd1 = (self.phi(z + h) - self.phi(z - h)) / (2.0 * h);
            let fd2 = (self.dphi(z + h) - self.dphi(z - h)) / (2.0 * h);
            let e1 = (fd1 - d1).abs() / (1.0 + d1.abs());
            let e2 = (fd2 - d2).abs() / (1.0 + d2.abs());
            if e1 > 1e-6 || e2 > 1e-6 {
                return Err(Error::Precondition(format!(
                    "{}: derivative mismatch at z = {z} (errors {e1:e}, {e2:e})",
                    self.kind
                )));
            }
        }
        Ok(())
    }
}

/// `max |g|` over an interval: dense grid followed by golden-section
/// refinement around the best grid point. Inflated by a relative `1e-12` so
/// the result is safe to use as an upper bound.
pub fn max_abs(g: ScalarFn, (lo, hi): (f64, f64)) -> f64 {
    const STEPS: usize = 200_000;
    let step = (hi - lo) / STEPS as f64;
    let mut best_z = lo;
    let mut best = g(lo).abs();
    for k in 1..=STEPS {
        let z = lo + step * k as f64;
        let val = g(z).abs();
        if val > best {
            best = val;
            best_z = z;
        }
    }
    let (mut a, mut b) = ((best_z - step).max(lo), (best_z + step).min(hi));
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    for _ in 0..100 {
        let c = b - inv_phi * (b - a);
        let d = a + inv_phi * (b - a);
        if g(c).abs() > g(d).abs() {
            b = d;
        } else {
            a = c;
        }
    }
    let refined = g(0.5 * (a + b)).abs();
    best.max(refined) * (1.0 + 1e-12)
}
