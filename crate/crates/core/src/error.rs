use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid dimension: {0}")]
    Dimension(String),

    #[error("input must have unit L2 norm, got {norm}")]
    NonUnitInput { norm: f64 },

    #[error("row {row} of hidden layer {layer} has norm {norm:e}, below the degeneracy threshold")]
    DegenerateRow { layer: usize, row: usize, norm: f64 },

    #[error("batch is empty")]
    EmptyBatch,

    #[error("finite-difference step must be positive, got {0}")]
    InvalidStep(f64),

    #[error(
        "power iteration did not converge after {iterations} iterations (last estimate {estimate})"
    )]
    NotConverged { estimate: f64, iterations: usize },

    #[error("loss gradient is zero")]
    ZeroGradient,

    #[error("step rejected: output layer left its ball after {halvings} halvings (eta = {eta:e})")]
    StepRejected { halvings: usize, eta: f64 },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("format error at byte offset {offset}: {msg}")]
    Format { offset: u64, msg: String },

    #[error("config error on line {line}: {msg}")]
    Config { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
