//! Error type shared across the crate.

use thiserror::Error;

/// Crate-wide error type.
///
/// The CLI maps variants onto stable exit codes: `Input` and `Config`
/// become exit 2, `State` becomes exit 3, everything else exit 1.
#[derive(Debug, Error)]
pub enum Error {
    /// Tensor shapes incompatible for an operation.
    #[error("shape mismatch in {op}: {details}")]
    Shape { op: &'static str, details: String },

    /// An API contract was violated (e.g. backward from a non-scalar root).
    #[error("contract violation: {0}")]
    Contract(String),

    /// Numerical failure: division by zero, non-finite loss, domain error.
    #[error("numerical error: {0}")]
    Numerical(String),

    /// Bad user-supplied data (malformed CSV, out-of-range index, ...).
    #[error("input error: {0}")]
    Input(String),

    /// Invalid configuration (bad key, impossible hyperparameters, ...).
    #[error("config error: {0}")]
    Config(String),

    /// Incompatible or locked on-disk state (checkpoints, run directories).
    #[error("state error: {0}")]
    State(String),

    /// A metric could not be computed (e.g. every entry masked).
    #[error("metric error: {0}")]
    Metric(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, details: impl Into<String>) -> Self {
        Error::Shape {
            op,
            details: details.into(),
        }
    }
}

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
