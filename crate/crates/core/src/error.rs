use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not positive definite (pivot {pivot:e} at index {index})")]
    NotPositiveDefinite { index: usize, pivot: f64 },

    #[error("normal equations are singular; a positive regularizer is required")]
    SingularSystem,

    #[error("variance must be positive, got {0}")]
    NonPositiveVariance(f64),

    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch { context: &'static str, expected: usize, actual: usize },

    #[error("every machine weight is zero")]
    AllZeroWeights,

    #[error("weights do not form a simplex (sum = {0})")]
    InvalidSimplex(f64),

    #[error("code size {code} cannot be split into {channels} equal channels")]
    IndivisibleCode { code: usize, channels: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("need at least {needed} distinct machine counts, got {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error("snapshot: {0}")]
    Snapshot(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_len(context: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { context, expected, actual })
    }
}
