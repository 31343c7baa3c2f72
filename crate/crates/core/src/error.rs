use std::path::PathBuf;

use dualbind_autodiff::AutodiffError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),

    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("record {id}: {msg}")]
    InvalidRecord { id: String, msg: String },

    #[error("{path}:{line}: field `{field}`: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        field: String,
        msg: String,
    },

    #[error("split: {0}")]
    Split(String),

    #[error("metrics: {0}")]
    Metrics(String),

    #[error("training: {0}")]
    Training(String),

    #[error("checkpoint has bad magic bytes {0:?}")]
    BadMagic([u8; 4]),

    #[error("unsupported checkpoint format version {found} (expected {expected})")]
    BadVersion { found: u32, expected: u32 },

    #[error("checkpoint truncated while reading {0}")]
    Truncated(&'static str),

    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),

    #[error("checkpoint model config does not match the requested one: {0}")]
    ConfigMismatch(String),

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn io_err(context: impl Into<String>) -> impl FnOnce(std::io::Error) -> Error {
    let context = context.into();
    move |source| Error::Io { context, source }
}
