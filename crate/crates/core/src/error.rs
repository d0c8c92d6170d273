use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("invalid rollout count: need m >= {needed}, got {got}")]
    InvalidRolloutCount { needed: usize, got: usize },

    #[error("invalid batch size: need n >= {needed}, got {got}")]
    InvalidBatchSize { needed: usize, got: usize },

    #[error("invalid shape: {0}")]
    InvalidShape(String),

    #[error("index out of range: {what} {index} (len {len})")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        len: usize,
    },

    #[error("shrinkage coefficient {0} outside [0, 1]")]
    InvalidLambda(f64),

    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },

    #[error("enumeration refused: {count} outcome tuples exceeds the limit of {limit}")]
    Intractable { count: u128, limit: u128 },

    #[error("estimator `{0}` is not defined in this context")]
    UnsupportedEstimator(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
