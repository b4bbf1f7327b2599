use std::io;

use thiserror::Error;

/// Errors raised across the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("format error: {0}")]
    Format(String),
    #[error("invalid scene spec: {0}")]
    Spec(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("duplicate key {0:?}")]
    DuplicateKey([i32; 3]),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("empty input")]
    EmptyInput,
    #[error("requested {k} neighbors from {n} points")]
    KTooLarge { k: usize, n: usize },
    #[error("index {index} out of range for {len} voxels")]
    Index { index: usize, len: usize },
    #[error("invalid config: {0}")]
    Config(String),
    #[error("training scenes must carry labels")]
    MissingLabels,
    #[error("transform set is empty")]
    EmptyTransformSet,
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn shape_err(msg: impl Into<String>) -> Error {
    Error::Shape(msg.into())
}
