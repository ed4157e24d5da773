use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("bad magic: expected {expected:?}")]
    BadMagic { expected: &'static str },

    #[error("version mismatch: file has version {found}, supported version is {supported}")]
    VersionMismatch { found: u32, supported: u32 },

    #[error("truncated payload: {0}")]
    TruncatedPayload(String),

    #[error("label {label} at row {row} is out of range for {classes} classes")]
    LabelOutOfRange {
        row: usize,
        label: u64,
        classes: usize,
    },

    #[error("ragged rows: line {line} has {found} fields, expected {expected}")]
    RaggedRows {
        line: usize,
        found: usize,
        expected: usize,
    },

    #[error("non-numeric cell {cell:?} at line {line}")]
    NonNumeric { line: usize, cell: String },

    #[error("negative label {label} at line {line}")]
    NegativeLabel { line: usize, label: i64 },

    #[error("row {row} has zero norm and cannot be normalized")]
    ZeroNormRow { row: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("{what} index {index} out of bounds (len {len})")]
    IndexOutOfBounds {
        what: &'static str,
        index: usize,
        len: usize,
    },

    #[error("class {class} has {available} rows, {required} required")]
    InsufficientRows {
        class: usize,
        available: usize,
        required: usize,
    },

    #[error("pool has {available} classes, {required} required")]
    InsufficientClasses { available: usize, required: usize },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("non-finite loss at step {step} (lr = {lr})")]
    NonFiniteLoss { step: usize, lr: f64 },

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("episode {index} failed: {source}")]
    Episode {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn file(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::File {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::InvalidConfig(msg.into())
    }
}
