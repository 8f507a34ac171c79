use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("empty trace")]
    EmptyTrace,
    #[error("window too large: window {window} exceeds trace length {len}")]
    WindowTooLarge { window: usize, len: usize },
    #[error("window must be odd, got {0}")]
    EvenWindow(usize),
    #[error("trace channel lengths differ: re {re}, im {im}")]
    ChannelMismatch { re: usize, im: usize },

    #[error("bad magic")]
    BadMagic,
    #[error("unsupported format version {0}")]
    UnsupportedVersion(u32),
    #[error("truncated payload: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("shape/header inconsistency: {0}")]
    ShapeMismatch(String),
    #[error("invalid header: {0}")]
    InvalidHeader(String),
    #[error("architecture mismatch")]
    ArchitectureMismatch,

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error in {path} at line {line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("width mismatch: network expects {expected} samples, signal has {found}")]
    WidthMismatch { expected: usize, found: usize },
    #[error("invalid start: loss at initial parameters is not finite")]
    InvalidStart,
    #[error("non-finite value in layer {layer}")]
    NonFinite { layer: usize },
    #[error("empty mask: {0}")]
    EmptyMask(String),
    #[error("index out of range: {0}")]
    OutOfRange(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
