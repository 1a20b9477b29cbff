//! Deep WeightNorm networks with smooth activations: forward pass, exact
//! gradients, Hessian-vector products and spectral norm estimates, the
//! closed-form curvature/gradient/loss bounds, RSC and smoothness
//! parameters, the generalization bound, and an experiment harness.
//!
//! ```
//! use wnorm::{make_network, ActivationSpec, Dims, InitScheme};
//!
//! let dims = Dims::new(3, 8, 2).unwrap();
//! let net = make_network(dims, ActivationSpec::tanh(), InitScheme::Uniform { scale: 1.0 }, 7).unwrap();
//! let x = [0.6, 0.0, 0.8];
//! assert!(net.predict(&x).unwrap().abs() <= 1.0);
//! ```

// `!(x > 0.0)` style checks are used on purpose so that NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod activation;
pub mod bounds;
pub mod deriv;
pub mod error;
pub mod gen;
pub mod harness;
pub mod linalg;
pub mod net;
pub mod rsc;

pub use activation::{ActivationKind, ActivationSpec};
pub use bounds::{BoundInputs, BoundReport, Dominance};
pub use deriv::{Batch, GradTheta, LossGrad};
pub use error::{Error, Result};
pub use gen::{GenInputs, GenReport};
pub use harness::data::Dataset;
pub use harness::diagnostics::DiagnosticsRecord;
pub use net::{forward, make_network, Dims, ForwardTrace, InitScheme, NetworkParams};
pub use rsc::{RscSnapshot, TrainConfig};
