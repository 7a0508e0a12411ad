use duc_core::DucError;
use thiserror::Error;

/// Process exit status for each failure class.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitKind {
    Config = 2,
    Data = 3,
    Numerical = 4,
}

#[derive(Debug, Error)]
#[error("{message}")]
pub struct CliError {
    pub kind: ExitKind,
    pub message: String,
}

pub type CliResult<T> = std::result::Result<T, CliError>;

impl CliError {
    pub fn config(message: impl Into<String>) -> Self {
        Self { kind: ExitKind::Config, message: message.into() }
    }

    pub fn data(message: impl Into<String>) -> Self {
        Self { kind: ExitKind::Data, message: message.into() }
    }

    pub fn code(&self) -> i32 {
        self.kind as i32
    }
}

impl From<DucError> for CliError {
    fn from(e: DucError) -> Self {
        let kind = if e.is_numerical() {
            ExitKind::Numerical
        } else if e.is_data() || matches!(e, DucError::TooFewCovariates { .. }) {
            ExitKind::Data
        } else {
            ExitKind::Config
        };
        Self { kind, message: e.to_string() }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::data(format!("i/o error: {e}"))
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        Self::config(format!("json error: {e}"))
    }
}
