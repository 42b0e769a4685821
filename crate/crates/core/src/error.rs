use thiserror::Error;

/// Errors raised by the feature-learning library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("index {index} out of range 0..{len}")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid basis: {0}")]
    InvalidBasis(String),

    #[error("metric matrix is not positive definite: {0}")]
    SingularMetric(String),

    #[error("rank deficient: {0}")]
    RankDeficient(String),

    #[error("ill-conditioned: {0}")]
    IllConditioned(String),

    #[error("numerical failure: {0}")]
    Numeric(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures caused by the numerics rather than by the caller's input.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::SingularMetric(_)
                | Error::RankDeficient(_)
                | Error::IllConditioned(_)
                | Error::Numeric(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
