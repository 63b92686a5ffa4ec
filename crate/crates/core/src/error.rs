use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error in {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    #[error("row {row} has {found} fields, expected {expected}")]
    RaggedRow {
        row: usize,
        expected: usize,
        found: usize,
    },

    #[error("non-numeric value {value:?} in column {column:?} at row {row}")]
    NonNumeric {
        row: usize,
        column: String,
        value: String,
    },

    #[error("missing value in column {column:?} at row {row}")]
    MissingValue { row: usize, column: String },

    #[error("column {0} not found")]
    MissingColumn(String),

    #[error("dataset has {0} class(es), at least 2 are required")]
    TooFewClasses(usize),

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("class {label} has {count} members, {required} required")]
    ClassTooSmall {
        label: usize,
        count: usize,
        required: usize,
    },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("prototype index {index} out of range (S = {count})")]
    IndexOutOfRange { index: usize, count: usize },

    #[error("no prototype {0}")]
    NoPrototype(String),

    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("unknown synthetic dataset kind {0:?}")]
    UnknownKind(String),

    #[error("training aborted at epoch {epoch}, sample {sample}: {reason}")]
    TrainingAborted {
        epoch: usize,
        sample: usize,
        reason: String,
    },

    #[error("non-finite gradient entry")]
    NonFiniteGradient,

    #[error("model file: {0}")]
    ModelFormat(String),

    #[error("unsupported model format version {found} (supported: {supported})")]
    UnsupportedVersion { found: u32, supported: u32 },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
