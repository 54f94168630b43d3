use std::path::PathBuf;

use thiserror::Error;

/// Failures while reading or preparing image data.
#[derive(Debug, Error)]
pub enum DataError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: bad magic number 0x{found:08x} (expected 0x{expected:08x})")]
    BadMagic { path: PathBuf, expected: u32, found: u32 },
    #[error("{path}: truncated: expected {expected} bytes, found {actual}")]
    Truncated { path: PathBuf, expected: usize, actual: usize },
    #[error("{path}: header dimensions {dims:?} overflow the addressable size")]
    DimensionOverflow { path: PathBuf, dims: Vec<u32> },
    #[error("{path}: {detail}")]
    Format { path: PathBuf, detail: String },
    #[error("{path}: size {actual} bytes is not valid for a CIFAR-10 batch (expected {expected} bytes)")]
    CifarSize { path: PathBuf, expected: usize, actual: usize },
    #[error("{path}: label {label} at record {index} outside [0, 10)")]
    LabelRange { path: PathBuf, index: usize, label: u8 },
    #[error("channel {channel} has zero standard deviation")]
    ZeroStd { channel: usize },
    #[error("{0}")]
    Invalid(String),
}

/// Failures while reading or applying a checkpoint.
#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("not a checkpoint: bad magic {found:?}")]
    BadMagic { found: Vec<u8> },
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("truncated checkpoint: needed {needed} bytes at offset {offset}, {available} available")]
    Truncated { offset: usize, needed: usize, available: usize },
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
    #[error("registry mismatch at `{name}`: {detail}")]
    Registry { name: String, detail: String },
    #[error("shape mismatch for `{name}`: checkpoint has {found:?}, model expects {expected:?}")]
    Shape { name: String, expected: Vec<usize>, found: Vec<usize> },
}

/// Top-level error for everything above the tensor layer.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("non-finite training loss {loss} at epoch {epoch}, step {step}")]
    NonFinite { epoch: usize, step: usize, loss: f64 },
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error(transparent)]
    Tensor(#[from] numcore::Error),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
