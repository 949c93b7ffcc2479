use std::path::PathBuf;

use thiserror::Error;

pub type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error("config {path}: {message}")]
    Config { path: PathBuf, message: String },

    #[error("missing file: {0}")]
    MissingFile(PathBuf),

    #[error(transparent)]
    Core(#[from] acorn_core::Error),
}

impl CliError {
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Config { .. } => "config",
            CliError::MissingFile(_) => "missing_file",
            CliError::Core(e) => e.kind(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            _ => 1,
        }
    }

    /// Single-line JSON object: `{"error":<kind>,"message":<text>}`.
    pub fn to_line(&self) -> String {
        let message = self.to_string().replace('\n', " ");
        serde_json::json!({ "error": self.kind(), "message": message }).to_string()
    }
}
