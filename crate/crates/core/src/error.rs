use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("graph is not connected")]
    Disconnected,

    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: String, got: String },

    #[error("spectral precondition violated: {0}")]
    Spectral(String),

    /// Already at exact consensus; acceleration has nothing to do.
    #[error("rho_com is zero, skip acceleration")]
    ExactConsensus,

    #[error("iteration diverged at k = {iteration}: {reason}")]
    Diverged { iteration: usize, reason: String },

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("oracle check failed: {0}")]
    Oracle(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        invalid(msg)
    }
}
