use std::path::PathBuf;

use serde::Serialize;

/// Failure of a CLI run. Each variant maps to its own exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("unknown command {0:?}")]
    UnknownCommand(String),

    #[error("config file is for command {found:?}, but {expected:?} was requested")]
    CommandMismatch { expected: String, found: String },

    #[error("malformed config: {0}")]
    MalformedConfig(String),

    #[error("missing input {}", .0.display())]
    MissingInput(PathBuf),

    #[error("malformed input {}: {message}", .path.display())]
    MalformedInput { path: PathBuf, message: String },

    #[error("i/o error on {}: {source}", .path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Compute(#[from] devnoise_core::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::UnknownCommand(_) | Self::CommandMismatch { .. } => 3,
            Self::MalformedConfig(_) => 4,
            Self::MissingInput(_) => 5,
            Self::MalformedInput { .. } => 6,
            Self::Io { .. } => 7,
            Self::Compute(_) => 8,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Self::UnknownCommand(_) => "unknown_command",
            Self::CommandMismatch { .. } => "command_mismatch",
            Self::MalformedConfig(_) => "malformed_config",
            Self::MissingInput(_) => "missing_input",
            Self::MalformedInput { .. } => "malformed_input",
            Self::Io { .. } => "io",
            Self::Compute(_) => "computation",
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        let path = path.into();
        if source.kind() == std::io::ErrorKind::NotFound {
            Self::MissingInput(path)
        } else {
            Self::Io { path, source }
        }
    }

    /// Machine-readable form written to stderr and `error.json`.
    pub fn report(&self) -> ErrorReport {
        ErrorReport { error: self.kind(), message: self.to_string(), exit_code: self.exit_code() }
    }
}

#[derive(Debug, Serialize)]
pub struct ErrorReport {
    pub error: &'static str,
    pub message: String,
    pub exit_code: i32,
}

pub type Result<T> = std::result::Result<T, CliError>;
