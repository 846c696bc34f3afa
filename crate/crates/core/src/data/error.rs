use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed CSV at line {line}: {message}")]
    Csv { line: u64, message: String },
    #[error("line {line}: column `{column}` has unparseable value `{value}`")]
    Parse {
        line: u64,
        column: String,
        value: String,
    },
    #[error("line {line}: missing value in column `{column}`")]
    MissingValue { line: u64, column: String },
    #[error("line {line}: timestamp `{label}` does not strictly follow the previous row")]
    Ordering { line: u64, label: String },
    #[error("unknown column `{0}`")]
    UnknownColumn(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("series is empty")]
    EmptySeries,
    #[error("need at least {needed} rows, got {got}")]
    TooFewRows { needed: usize, got: usize },
    #[error("column `{0}` is constant over the training rows")]
    DegenerateColumn(String),
    #[error("series of {rows} rows is too short for a window of {window}")]
    InsufficientData { rows: usize, window: usize },
    #[error("invalid split: {0}")]
    InvalidSplit(String),
    #[error("non-finite value at row {row}, column {column}")]
    NonFinite { row: usize, column: usize },
}
