use thiserror::Error;

/// Errors raised by scenario generation, the quantizer oracle, the solvers
/// and the experiment harness.
///
/// Solver outcomes such as infeasibility are reported through status enums
/// on the solution types, not through this error.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid quantizer resolution: {0}")]
    InvalidResolution(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("scenario generation failed: {0}")]
    Generation(String),

    #[error("lloyd-max iteration for {bits} bits did not converge after {iterations} iterations")]
    Oracle { bits: u32, iterations: usize },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("empty selection: {0}")]
    EmptySelection(String),

    #[error("malformed record: {0}")]
    Record(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Toml(#[from] toml::de::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
