use std::path::PathBuf;

use svb_core::SvbError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {detail}")]
    Parse { path: PathBuf, detail: String },

    #[error("incompatible inputs: {0}")]
    Incompatible(String),

    #[error(transparent)]
    Engine(#[from] SvbError),
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(path: impl Into<PathBuf>, detail: impl ToString) -> Self {
        CliError::Parse {
            path: path.into(),
            detail: detail.to_string(),
        }
    }

    /// Process exit code. 2 matches clap's own usage errors.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Io { .. } => 3,
            CliError::Parse { .. } => 4,
            CliError::Incompatible(_) => 8,
            CliError::Engine(e) => match e {
                SvbError::InvalidConfig(_) | SvbError::BatchSize { .. } => 2,
                SvbError::Domain { .. } | SvbError::NonFinite { .. } | SvbError::EmptyBatch => 5,
                SvbError::Divergence { .. } => 6,
                SvbError::GridUnderflow => 7,
                SvbError::DimensionMismatch { .. } => 8,
            },
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
