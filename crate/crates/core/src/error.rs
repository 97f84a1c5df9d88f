use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("point lies outside the set (distance {distance:.3e} > tolerance {tolerance:.1e})")]
    OutsideSet { distance: f64, tolerance: f64 },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("unknown keys: {}", .0.join(", "))]
    UnknownKeys(Vec<String>),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("non-finite value in {what} at record {record}")]
    NonFinite { what: String, record: usize },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got })
    }
}
