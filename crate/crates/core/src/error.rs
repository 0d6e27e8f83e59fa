use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DfdError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("i/o error: {0}")]
    Stream(#[from] std::io::Error),
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("index out of range: {what} index {index} >= {len}")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        len: usize,
    },
    #[error("mesh has zero vertices")]
    EmptyMesh,
    #[error("degenerate geometry: {0}")]
    Degenerate(String),
    #[error("bad file format: {0}")]
    Format(String),
    #[error("unsupported version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("missing input: {0}")]
    Missing(String),
    #[error("training diverged: {0}")]
    Diverged(String),
}

impl DfdError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        DfdError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn invalid(msg: impl Into<String>) -> Self {
        DfdError::Invalid(msg.into())
    }
}

pub type Result<T, E = DfdError> = std::result::Result<T, E>;
