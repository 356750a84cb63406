use serde_json::{json, Value};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("validation error: {0}")]
    Validation(String),
    #[error("numerical failure: {message}")]
    Numerical { message: String, details: Value },
    #[error("i/o error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

impl CliError {
    pub fn validation(msg: impl Into<String>) -> Self {
        CliError::Validation(msg.into())
    }

    pub fn numerical(err: impl std::fmt::Display) -> Self {
        CliError::Numerical { message: err.to_string(), details: Value::Null }
    }

    pub fn numerical_with(err: impl std::fmt::Display, details: Value) -> Self {
        CliError::Numerical { message: err.to_string(), details }
    }

    pub fn io(path: impl std::fmt::Display, source: std::io::Error) -> Self {
        CliError::Io { path: path.to_string(), source }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Numerical { .. } => 3,
            CliError::Io { .. } => 1,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Validation(_) => "validation",
            CliError::Numerical { .. } => "numerical",
            CliError::Io { .. } => "io",
        }
    }

    /// Machine-readable diagnostics record.
    pub fn diagnostics(&self, command: &str) -> Value {
        let details = match self {
            CliError::Numerical { details, .. } => details.clone(),
            _ => Value::Null,
        };
        json!({
            "command": command,
            "kind": self.kind(),
            "exit_code": self.exit_code(),
            "message": self.to_string(),
            "details": details,
        })
    }
}
