use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("singular system: {0}")]
    Singular(String),

    #[error("degenerate model: {0}")]
    Degenerate(String),

    #[error("no unique stationary distribution: {0}")]
    Multiplicity(String),

    #[error("behaviour policy does not cover the target policy: {0}")]
    Coverage(String),

    /// The fixed point requested does not exist (e.g. a singular Bellman system).
    #[error("fixed point does not exist: {0}")]
    Nonexistence(String),

    #[error("numerical routine did not converge: {0}")]
    NoConvergence(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
