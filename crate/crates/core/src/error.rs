use thiserror::Error;

/// Errors surfaced by the library.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration or incompatible shapes/grids.
    #[error("configuration error: {0}")]
    Config(String),

    /// The solver or a training run produced non-finite values.
    #[error("numerical divergence: {0}")]
    Divergence(String),

    /// A computation graph was built with incompatible operands.
    #[error("graph construction error: {0}")]
    Graph(String),

    /// An API was used out of order (e.g. backward before forward).
    #[error("usage error: {0}")]
    Usage(String),

    /// Malformed file contents.
    #[error("format error: {0}")]
    Format(String),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn graph(msg: impl Into<String>) -> Self {
        Error::Graph(msg.into())
    }
}
