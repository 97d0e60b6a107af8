//! Error type shared by every module of the crate.

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = QeError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum QeError {
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("data error at line {line}: {msg}")]
    Data { line: usize, msg: String },

    #[error("degenerate data: {0}")]
    Degenerate(String),

    #[error("correlation undefined: {0}")]
    UndefinedCorrelation(String),

    #[error("unknown language direction `{0}`")]
    UnknownLanguage(String),

    #[error("checkpoint {path}: {msg}")]
    Checkpoint { path: PathBuf, msg: String },

    #[error("checkpoint {path}: checksum mismatch")]
    Checksum { path: PathBuf },

    #[error("checkpoint {path}: format version {found}, expected {expected}")]
    Version {
        path: PathBuf,
        found: u32,
        expected: u32,
    },

    #[error("checkpoint {path}: truncated ({len} bytes, expected {expected})")]
    Truncated {
        path: PathBuf,
        len: usize,
        expected: usize,
    },

    #[error("head mode mismatch: checkpoint is {found}, requested {expected}")]
    ModeMismatch { found: String, expected: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl QeError {
    pub fn shape(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        QeError::Shape {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        QeError::Io {
            path: path.into(),
            source,
        }
    }
}
