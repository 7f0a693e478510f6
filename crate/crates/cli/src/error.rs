use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad flags, config, or input data.
    #[error("{0}")]
    Validation(String),

    #[error("cannot write {path}: {source}")]
    Write {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Model(#[from] btpnn::Error),

    #[error("rerun of {manifest} differs in {file}")]
    Mismatch { manifest: PathBuf, file: String },
}

impl CliError {
    /// Process exit code: 2 for invalid input, 3 for failures while running.
    pub fn exit_code(&self) -> i32 {
        use btpnn::Error as E;
        match self {
            CliError::Validation(_) => 2,
            CliError::Model(e) => match e {
                E::Csv { .. }
                | E::RowWidth { .. }
                | E::BadCell { .. }
                | E::MissingValue { .. }
                | E::UnknownTarget(_)
                | E::EmptyDataset(_)
                | E::Support { .. }
                | E::Config(_)
                | E::IndexOutOfRange { .. }
                | E::Schema(_)
                | E::EmptySamples
                | E::SamplesFormat { .. } => 2,
                _ => 3,
            },
            CliError::Write { .. } | CliError::Mismatch { .. } => 3,
        }
    }
}

pub(crate) fn invalid(msg: impl Into<String>) -> CliError {
    CliError::Validation(msg.into())
}
