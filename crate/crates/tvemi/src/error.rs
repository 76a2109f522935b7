use std::path::Path;

use tvemi_core::Error as CoreError;

/// Command failures, grouped by exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad flags, arguments or configuration files (exit code 1).
    #[error("{0}")]
    Usage(String),
    /// Unreadable or invalid data (exit code 2).
    #[error("{0}")]
    Data(String),
    /// A numerical procedure failed (exit code 3).
    #[error("{0}")]
    Numerical(String),
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }

    pub fn io(path: &Path, e: impl std::fmt::Display) -> Self {
        CliError::Data(format!("{}: {e}", path.display()))
    }

    /// Prefix the message with where the failure happened.
    pub fn context(self, what: impl std::fmt::Display) -> Self {
        match self {
            CliError::Usage(m) => CliError::Usage(format!("{what}: {m}")),
            CliError::Data(m) => CliError::Data(format!("{what}: {m}")),
            CliError::Numerical(m) => CliError::Numerical(format!("{what}: {m}")),
        }
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        let message = e.to_string();
        if e.is_numerical() {
            CliError::Numerical(message)
        } else if matches!(e, CoreError::InvalidArgument(_)) {
            CliError::Usage(message)
        } else {
            CliError::Data(message)
        }
    }
}
