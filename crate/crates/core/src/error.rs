use thiserror::Error;

/// Errors raised anywhere in the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid problem: {0}")]
    InvalidProblem(String),

    #[error("summand index {index} out of range for {count} summands")]
    SummandIndex { index: usize, count: usize },

    #[error("prox solve stopped at residual {residual:.3e} after {iters} iterations (tolerance {tol:.1e})")]
    ProxNotConverged { residual: f64, iters: usize, tol: f64 },

    #[error("invalid run configuration: {0}")]
    InvalidRun(String),

    #[error("{method}: precondition violated: {reason}")]
    Precondition { method: String, reason: String },

    #[error("local subsolver diverged on client {client} at outer iteration {outer}: {detail}")]
    SubsolverDiverged { client: usize, outer: usize, detail: String },

    #[error("linear algebra failure: {0}")]
    Numerical(String),

    #[error("lower-bound construction: {0}")]
    LowerBound(String),

    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
