use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error("config {path}: {message}")]
    Config { path: String, message: String },

    #[error("checkpoint {path}: {message}")]
    Checkpoint { path: String, message: String },

    #[error(transparent)]
    Core(#[from] xtfc_hjb::Error),

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type CliResult<T> = std::result::Result<T, CliError>;

/// Process exit codes.
pub mod exit {
    pub const SUCCESS: i32 = 0;
    /// Filesystem trouble while writing outputs.
    pub const IO: i32 = 1;
    /// Bad configuration, arguments or input files.
    pub const USAGE: i32 = 2;
    /// Non-finite loss or state.
    pub const NUMERICAL: i32 = 3;
}

impl CliError {
    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        CliError::Io {
            context: context.into(),
            source,
        }
    }

    pub fn checkpoint(path: &Path, message: impl Into<String>) -> Self {
        CliError::Checkpoint {
            path: path.display().to_string(),
            message: message.into(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(e) if e.is_numerical() => exit::NUMERICAL,
            CliError::Io { .. } | CliError::Csv(_) | CliError::Json(_) => exit::IO,
            _ => exit::USAGE,
        }
    }
}
