use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("invalid graph state: {0}")]
    State(String),

    #[error("network build failed at {stage}: {detail}")]
    Build { stage: String, detail: String },

    #[error("codec error at byte {offset}: {detail}")]
    Codec { offset: usize, detail: String },

    #[error("checkpoint integrity error: {0}")]
    Integrity(String),

    #[error("checkpoint does not match expected network: {0}")]
    SpecMismatch(String),

    #[error("ingestion error: {0}")]
    Ingestion(String),

    #[error("split protocol error: {0}")]
    Protocol(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn arg(detail: impl Into<String>) -> Self {
        Error::Argument(detail.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
