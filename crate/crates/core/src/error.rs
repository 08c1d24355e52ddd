use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("no samples")]
    NoSamples,

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("column {column} is not owned by rank {rank} (owns {start}..{end})")]
    Ownership {
        column: usize,
        rank: usize,
        start: usize,
        end: usize,
    },

    #[error("iterate became non-finite at iteration {iteration}")]
    Divergence { iteration: usize },

    #[error("reference solution is zero; relative error is undefined")]
    UndefinedReference,

    #[error("reference solver stopped after {iterations} iterations with KKT residual {residual:e}")]
    ReferenceNotConverged { iterations: usize, residual: f64 },

    #[error("all-reduce payload mismatch: rank {rank} sent {found} words, expected {expected}")]
    PayloadMismatch {
        rank: usize,
        expected: usize,
        found: usize,
    },

    #[error("SPMD contract violation: {0}")]
    ContractViolation(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
