use std::path::PathBuf;

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image error for {path}: {message}")]
    Image { path: PathBuf, message: String },

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("ingest aborted, {failed} of {total} files unreadable: {examples}")]
    IngestFailures {
        failed: usize,
        total: usize,
        examples: String,
    },

    #[error("artifact store error: {0}")]
    Store(String),

    #[error("unknown artifact id: {0}")]
    UnknownArtifact(String),

    #[error("training diverged at iteration {iteration}: {detail}")]
    Divergence { iteration: usize, detail: String },

    #[error("non-finite value in loss term `{term}`")]
    NonFiniteTerm { term: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unknown layer: {0}")]
    UnknownLayer(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("defense `{defense}` failed: {detail}")]
    Defense { defense: String, detail: String },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
