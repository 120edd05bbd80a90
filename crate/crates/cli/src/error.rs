use std::path::PathBuf;

use rabc::AbcError;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{path}: {msg}")]
    Config { path: PathBuf, msg: String },
    #[error("{path}, line {line}: {msg}")]
    Ingest {
        path: PathBuf,
        line: usize,
        msg: String,
    },
    #[error("archive {path}: {msg}")]
    Archive { path: PathBuf, msg: String },
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Csv(#[from] csv::Error),
    #[error("{0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Abc(#[from] AbcError),
}

impl CliError {
    /// 2 for configuration and usage problems, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config { .. } | Self::Abc(AbcError::Usage(_)) => 2,
            _ => 1,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
