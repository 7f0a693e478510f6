use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error in {path}: {message}")]
    Csv { path: PathBuf, message: String },

    #[error("row {row}: expected {expected} fields, found {found}")]
    RowWidth {
        row: usize,
        expected: usize,
        found: usize,
    },

    #[error("row {row}, column '{column}': cannot parse '{value}' as a number")]
    BadCell {
        row: usize,
        column: String,
        value: String,
    },

    #[error("row {row}, column '{column}': missing value")]
    MissingValue { row: usize, column: String },

    #[error("target column '{0}' not found in header")]
    UnknownTarget(String),

    #[error("dataset is empty or too small: {0}")]
    EmptyDataset(String),

    #[error("row {row}: response {value} is outside the support of the {family} family")]
    Support {
        row: usize,
        value: f64,
        family: &'static str,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("degenerate bandwidth: sigmoid mean {mean:e} at b={b}, gamma={gamma}")]
    DegenerateBandwidth { b: f64, gamma: f64, mean: f64 },

    #[error("variable index {index} out of range for p = {p}")]
    IndexOutOfRange { index: usize, p: usize },

    #[error("schema mismatch: {0}")]
    Schema(String),

    #[error("no posterior samples")]
    EmptySamples,

    #[error("{0}")]
    Invalid(String),

    #[error("malformed samples file at line {line}: {message}")]
    SamplesFormat { line: usize, message: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
