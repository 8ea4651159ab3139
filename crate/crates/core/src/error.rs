use std::path::PathBuf;

use thiserror::Error;

use crate::types::Violation;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: String, found: String },

    #[error("invalid image: {0}")]
    InvalidImage(String),

    #[error("invalid kernel: {0}")]
    InvalidKernel(String),

    #[error("kernel side {kernel} exceeds plane size {height}x{width}")]
    KernelTooLarge {
        kernel: usize,
        height: usize,
        width: usize,
    },

    #[error("invariant violated: {0}")]
    Invalid(Violation),

    #[error("pixel ({row}, {col}) out of bounds for {height}x{width} field")]
    OutOfBounds {
        row: usize,
        col: usize,
        height: usize,
        width: usize,
    },

    #[error("crop margin {margin} too large for {height}x{width} image")]
    CropTooLarge {
        margin: usize,
        height: usize,
        width: usize,
    },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("dense kernel field of {0} scalars cannot be allocated")]
    TooLarge(u128),

    #[error("trajectory does not fit a {side}x{side} kernel with a one pixel margin")]
    SupportExceeded { side: usize },

    #[error("bad magic: expected \"NUBF\", found {0:?}")]
    BadMagic([u8; 4]),

    #[error("unsupported NUBF version {0}")]
    UnsupportedVersion(u32),

    #[error("truncated payload: missing {missing} bytes")]
    Truncated { missing: usize },

    #[error("{0} trailing bytes after payload")]
    TrailingBytes(usize),

    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),

    #[error("decode failure: {0}")]
    Decode(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn dims(expected: impl Into<String>, found: impl Into<String>) -> Self {
        Error::DimensionMismatch {
            expected: expected.into(),
            found: found.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
