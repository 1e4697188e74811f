//! CLI error type and exit-code mapping.

use tailcut_core::CoreError;

use crate::format::FormatError;

/// Exit codes: 0 success, 2 usage, 3 format/schema, 4 numeric divergence,
/// 1 anything else.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Format(#[from] FormatError),
    #[error("json schema: {0}")]
    Json(#[from] serde_json::Error),
    #[error("{0}")]
    Core(#[from] CoreError),
    #[error("{0}")]
    Usage(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Format(_) | CliError::Json(_) => 3,
            CliError::Core(CoreError::Divergence { .. }) => 4,
            CliError::Core(_) => 1,
            CliError::Io(_) => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
