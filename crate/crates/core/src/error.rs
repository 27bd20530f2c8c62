use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    Dimension { expected: usize, found: usize },

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("empty result: {0}")]
    EmptyResult(&'static str),

    #[error("no grid radius satisfied the r_min condition within {cap} steps")]
    Estimation { cap: usize },

    #[error("malformed input at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    #[error(transparent)]
    IndexFile(#[from] IndexFileError),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::Parameter(msg.into())
    }
}

/// Failures specific to loading a persisted `.deti` index.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum IndexFileError {
    #[error("bad magic bytes, not a DET index file")]
    BadMagic,

    #[error("unsupported index version {found} (expected {expected})")]
    UnsupportedVersion { found: u32, expected: u32 },

    #[error("checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    Checksum { stored: u32, computed: u32 },

    #[error("truncated index file while reading `{field}` at byte {offset}")]
    Truncated { field: &'static str, offset: u64 },

    #[error("invalid value in field `{field}`: {message}")]
    InvalidField {
        field: &'static str,
        message: String,
    },

    #[error(
        "index does not match dataset: `{field}` is {index} in the index, {dataset} in the dataset"
    )]
    DatasetMismatch {
        field: &'static str,
        index: u64,
        dataset: u64,
    },
}
