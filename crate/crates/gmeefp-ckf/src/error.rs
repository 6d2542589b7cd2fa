use thiserror::Error;

/// Errors produced by the filtering and benchmarking APIs.
#[derive(Debug, Error)]
pub enum Error {
    /// A matrix that must be positive definite failed its Cholesky
    /// factorization even after the single jitter retry.
    #[error("matrix is not positive definite")]
    NotPositiveDefinite,

    /// An argument fell outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// The weighted normal matrix of the fixed-point update could not be
    /// inverted.
    #[error("singular normal matrix in fixed-point update")]
    SingularNormalMatrix,

    /// Requested filter preset does not exist.
    #[error("unknown preset `{0}`")]
    UnknownPreset(String),

    /// An experiment configuration failed validation or parsing.
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
