use hwdm_core::Error as CoreError;
use thiserror::Error;

/// Failures of one command, grouped by exit code.
#[derive(Debug, Error)]
pub enum CliError {
    /// Bad flags or configuration: exit code 1.
    #[error("{0}")]
    Usage(String),
    /// Unreadable or malformed input files: exit code 2.
    #[error("{0}")]
    Data(String),
    /// Training produced non-finite values: exit code 3.
    #[error("{0}")]
    Divergence(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Divergence(_) => 3,
        }
    }

    /// Prefixes the message with where it happened.
    pub fn context(self, at: impl std::fmt::Display) -> Self {
        match self {
            CliError::Usage(m) => CliError::Usage(format!("{at}: {m}")),
            CliError::Data(m) => CliError::Data(format!("{at}: {m}")),
            CliError::Divergence(m) => CliError::Divergence(format!("{at}: {m}")),
        }
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::Divergence(_) | CoreError::NonFinite { .. } => CliError::Divergence(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;
