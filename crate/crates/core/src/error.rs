use thiserror::Error;

/// Errors raised by the tokenization, spline and statistics routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid knot vector: {0}")]
    InvalidKnots(String),

    #[error("basis index {index} out of range for {count} basis functions")]
    IndexOutOfRange { index: usize, count: usize },

    #[error("parameter {xi} outside the spline domain [{lo}, {hi}]")]
    OutsideDomain { xi: f64, lo: f64, hi: f64 },

    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("input too short: need at least {need} values, got {got}")]
    TooShort { need: usize, got: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("non-finite value at index {0}")]
    NonFinite(usize),

    #[error("least-squares fit failed: {0}")]
    FitFailed(String),

    #[error("cache rejected: {0}")]
    CacheMismatch(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("{0}")]
    Degenerate(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
