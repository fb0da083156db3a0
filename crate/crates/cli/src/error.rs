use std::fmt;

use dgp_gvi::GviError;

/// Failure categories, each with its own process exit code.
#[derive(Debug)]
pub enum CliError {
    /// Bad configuration or unusable input data.
    Config(String),
    /// Numeric or i/o failure while training or evaluating.
    Runtime(String),
    /// Gradient audit found a mismatch.
    GradCheck(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 1,
            CliError::Runtime(_) => 2,
            CliError::GradCheck(_) => 3,
        }
    }

    pub fn config(msg: impl Into<String>) -> Self {
        CliError::Config(msg.into())
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Runtime(m) => write!(f, "runtime failure: {m}"),
            CliError::GradCheck(m) => write!(f, "gradient check failed: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

/// Errors raised after validation are runtime failures.
impl From<GviError> for CliError {
    fn from(e: GviError) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(format!("i/o: {e}"))
    }
}

pub type CliResult<T> = Result<T, CliError>;
