use thiserror::Error;

/// Errors raised by grid, tensor, geometry and flow operations.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("configuration error at `{key}`: {message}")]
    Config { key: String, message: String },

    /// Metric lost positive definiteness or became too ill-conditioned to invert.
    #[error("metric degenerated at node {node}: {reason}")]
    Degenerate { node: usize, reason: String },

    #[error("snapshot format version {found} not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("snapshot truncated: {0}")]
    Truncated(String),

    #[error("snapshot shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("malformed snapshot: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn arg<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Argument(msg.into()))
}
