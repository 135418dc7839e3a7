use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("architecture parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("invalid architecture: {0}")]
    Architecture(String),

    #[error("unsatisfiable scale plan at layer {layer}: {msg}")]
    UnsatisfiablePlan { layer: usize, msg: String },

    #[error("invalid schedule: {0}")]
    Schedule(String),

    #[error("bad magic in {path}: expected {expected:#010x}, found {found:#010x}")]
    BadMagic {
        path: PathBuf,
        expected: u64,
        found: u64,
    },

    #[error("invalid data in {path}: {detail}")]
    Data { path: PathBuf, detail: String },

    #[error("truncated file {path}: {detail}")]
    Truncated { path: PathBuf, detail: String },

    #[error("record count mismatch in {path}: {detail}")]
    RecordCount { path: PathBuf, detail: String },

    #[error("checkpoint version mismatch: file has {found}, reader supports {supported}")]
    Version { found: u32, supported: u32 },

    #[error("checkpoint checksum failure: stored {stored:#010x}, computed {computed:#010x}")]
    Checksum { stored: u32, computed: u32 },

    #[error("corrupted checkpoint: {0}")]
    Corrupt(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::ShapeMismatch {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }
}
