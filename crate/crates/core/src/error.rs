//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by any operation in this crate.
#[derive(Debug, Error)]
pub enum Error {
    /// Operand shapes are incompatible.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// A parameter violated its invariant (negative weight, zero stride, ...).
    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    /// Tensor file did not start with the `FMFT` magic bytes.
    #[error("bad magic: expected \"FMFT\"")]
    BadMagic,

    /// Tensor file declared an unknown element type.
    #[error("unsupported dtype byte {0:#04x}")]
    BadDType(u8),

    /// Tensor file ended before the declared payload was complete.
    #[error("truncated tensor file: expected {expected} payload bytes, found {found}")]
    Truncated { expected: usize, found: usize },

    /// A NaN or infinity was found where only finite values are allowed.
    #[error("non-finite value at element {0}")]
    NonFinite(usize),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    /// Malformed text input (TUM line, CSV row, config entry, manifest).
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    /// Innovation covariance is numerically singular.
    #[error("singular innovation covariance (condition number {0:.3e})")]
    SingularInnovation(f64),

    /// Point configuration too degenerate for alignment.
    #[error("degenerate configuration: {0}")]
    Degenerate(String),

    /// Iterative procedure diverged.
    #[error("divergence: {0}")]
    Divergence(String),

    /// A numerical consistency check failed.
    #[error("numerical failure: {0}")]
    Numerical(String),
}

pub type Result<T> = std::result::Result<T, Error>;
