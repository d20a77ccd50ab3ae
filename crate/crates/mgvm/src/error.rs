//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by distribution construction, special-function evaluation
/// and model fitting.
#[derive(Debug, Error)]
pub enum Error {
    /// Parameter outside its domain (negative concentration, non-finite
    /// entry, asymmetric coupling matrix, ...).
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// Vector or matrix sizes do not agree.
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    /// An index into the angle vector is out of range.
    #[error("index {index} out of range for dimension {dim}")]
    IndexOutOfRange { index: usize, dim: usize },

    /// A result exceeds the floating-point range and no log/scaled output was
    /// requested.
    #[error("overflow: {0}; request the log or scaled variant instead")]
    Overflow(String),

    /// The doubling quadrature scheme did not stabilise within its point cap.
    #[error("quadrature did not converge after {points} points")]
    QuadratureNonConvergence { points: usize },

    /// A Gram matrix stayed non positive definite through jitter escalation.
    #[error("matrix not positive definite after jitter escalation (condition estimate {cond:.3e})")]
    NotPositiveDefinite { cond: f64 },

    /// A rejection-sampler envelope could not be constructed. Reported as a
    /// defect, never silently ignored.
    #[error("sampler envelope construction failed: {0}")]
    EnvelopeConstruction(String),

    #[error("csv parse error at line {line}: {msg}")]
    CsvParse { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }
}
