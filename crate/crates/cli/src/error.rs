use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("parse error at `{field}`: {message}")]
    Parse { field: String, message: String },
    #[error("invalid scenario at `{field}`: {message}")]
    Validation { field: String, message: String },
    #[error("cannot write {path}: {source}")]
    Write { path: PathBuf, source: std::io::Error },
    #[error("report encoding failed: {0}")]
    Encode(String),
}

impl CliError {
    pub fn validation(field: impl Into<String>, message: impl std::fmt::Display) -> Self {
        CliError::Validation { field: field.into(), message: message.to_string() }
    }

    /// Process exit status: 2 for unreadable or malformed input, 3 for a
    /// well-formed scenario that fails validation, 4 when the report cannot
    /// be written.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Read { .. } | CliError::Parse { .. } => 2,
            CliError::Validation { .. } => 3,
            CliError::Write { .. } | CliError::Encode(_) => 4,
        }
    }
}
