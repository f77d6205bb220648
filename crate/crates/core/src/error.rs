use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A malformed input line (1-based line number).
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("validation error: {0}")]
    Validation(String),

    /// Inputs outside an operation's mathematical domain.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    /// The provider could not be reached or kept failing after retries.
    #[error("transport error: {0}")]
    Transport(String),

    /// The provider answered, but not in the agreed shape.
    #[error("protocol error: {0}")]
    Protocol(String),

    /// Completion output that cannot be parsed into the expected structure.
    #[error("format error: {message} (raw output: {raw:?})")]
    Format { message: String, raw: String },

    #[error("cache error: {0}")]
    Cache(String),

    #[error("corrupt artifact: {0}")]
    Corruption(String),

    #[error("missing artifact: {}", .0.display())]
    MissingArtifact(PathBuf),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }
}
