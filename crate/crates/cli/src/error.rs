//! Process-level error split: bad input versus failed computation.

use ppde_core::CoreError;

/// Errors surfaced to the shell. `Usage` means the invocation or config is
/// wrong (exit code 2); `Runtime` means the computation itself failed
/// (exit code 1). A failed verification is not an error — `verify` reports
/// it through the exit code directly.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        // Config errors out of the core are still bad input: the schema
        // passed but a value was unusable (empty grid, bad bounds, ...).
        match &e {
            CoreError::Config(_) => CliError::Usage(e.to_string()),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;
