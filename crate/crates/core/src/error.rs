use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch ({shapes})")]
    Shape { op: &'static str, shapes: String },

    #[error("{op}: every entry of row {row} is masked")]
    FullyMasked { op: &'static str, row: usize },

    #[error("backward through a selective barrier requires a loss root label")]
    MissingRootLabel,

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("invalid action: {0}")]
    InvalidAction(String),

    #[error("beam search has no feasible expansion")]
    EmptyBeam,

    #[error("chart: {0}")]
    Chart(String),

    #[error("{path}:{line}: {msg}")]
    Parse { path: String, line: usize, msg: String },

    #[error("config: {0}")]
    Config(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("{0}")]
    Limit(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn shape(op: &'static str, shapes: impl Into<String>) -> Self {
        Error::Shape { op, shapes: shapes.into() }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
