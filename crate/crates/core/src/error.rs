use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("catalog line {line}: {message}")]
    Catalog { line: usize, message: String },

    #[error("embeddings line {line}: {message}")]
    Embeddings { line: usize, message: String },

    /// A JSONL record failed to parse or validate.
    #[error("{source_name} line {line}: {message}")]
    Record {
        source_name: String,
        line: usize,
        message: String,
    },

    #[error("image ids do not match between streams; unmatched: {}", .0.join(", "))]
    UnmatchedImages(Vec<String>),

    #[error("empty distribution from provider at prefix {prefix:?}")]
    EmptyDistribution { prefix: Vec<String> },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("contract violation: {0}")]
    Contract(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn param(message: impl Into<String>) -> Self {
        Error::InvalidParameter(message.into())
    }
}
