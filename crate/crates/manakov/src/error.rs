use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("sample rate {rate:.4e} Hz too low, need at least {needed:.4e} Hz")]
    Aliasing { rate: f64, needed: f64 },
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("quadrature did not converge: estimated error {estimate:.3e} above tolerance {tol:.3e}")]
    Quadrature { estimate: f64, tol: f64 },
    #[error("matrix not positive definite (pivot {pivot} = {value:.3e})")]
    NotPositiveDefinite { pivot: usize, value: f64 },
    #[error("tensor truncation too small: lag {lag} needs n_max >= {needed}")]
    Truncation { lag: usize, needed: i32 },
    #[error("cache key mismatch in {path:?}")]
    CacheKeyMismatch { path: PathBuf },
    #[error("corrupt cache file {path:?}: {reason}")]
    CorruptCache { path: PathBuf, reason: String },
    #[error("particle filter: all weights underflowed at step {step}")]
    WeightUnderflow { step: usize },
    #[error("{stage}: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Wraps an error with the pipeline stage where it happened.
    pub fn at(self, stage: impl Into<String>) -> Error {
        Error::Stage {
            stage: stage.into(),
            source: Box::new(self),
        }
    }

    /// True when the root cause is a configuration problem.
    pub fn is_config(&self) -> bool {
        match self {
            Error::Config(_) => true,
            Error::Stage { source, .. } => source.is_config(),
            _ => false,
        }
    }
}
