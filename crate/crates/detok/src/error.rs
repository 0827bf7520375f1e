use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the analysis toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("tensor container error: {0}")]
    Container(String),

    #[error("tensor {name:?} not found in weight file")]
    TensorNotFound { name: String },

    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("corrupt data: {0}")]
    Corrupt(String),

    #[error("{what} {index} out of range (limit {limit})")]
    OutOfRange {
        what: &'static str,
        index: usize,
        limit: usize,
    },

    #[error("invalid UTF-8 in {path} at byte offset {offset}")]
    InvalidUtf8 { path: PathBuf, offset: usize },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("AUROC undefined: token {query} has no incoming bigram mass")]
    UndefinedAuroc { query: u32 },

    #[error("spearman undefined: zero-variance ranks")]
    UndefinedSpearman,

    #[error("empty query set after filtering")]
    EmptyQuerySet,

    #[error("counts snapshot error: {0}")]
    Snapshot(String),

    #[error("json parse error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
