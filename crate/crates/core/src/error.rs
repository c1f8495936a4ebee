use thiserror::Error;

/// Errors produced by graph construction, sampling, estimation and the study runners.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unit {unit} out of range for a graph with {n} units")]
    UnitOutOfRange { unit: usize, n: usize },

    #[error("period {period} out of range for {periods} periods")]
    PeriodOutOfRange { period: usize, periods: usize },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),

    #[error("edge list line {line}: {message}")]
    EdgeList { line: usize, message: String },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("period covariance is singular (min eigenvalue {0:e})")]
    SingularCovariance(f64),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
