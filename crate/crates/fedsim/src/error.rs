//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("index out of range: {0}")]
    IndexOutOfRange(String),

    #[error("orthogonalization failed: rank-deficient draw after {retries} retries")]
    RankDeficient { retries: usize },

    #[error("optimum not certified: {0}")]
    OptimumNotCertified(String),

    #[error("divergence detected at iteration {k}")]
    Divergence { k: u64 },

    #[error("method requires a known optimum ({0})")]
    MissingOptimum(String),

    #[error("missing state: {0}")]
    MissingState(String),

    #[error("theory unavailable: {0}")]
    TheoryUnavailable(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
