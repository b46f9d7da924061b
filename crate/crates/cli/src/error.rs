use std::fmt;
use std::path::Path;

use protocal_core::Error;

/// Process exit status for each failure class.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitKind {
    Usage = 2,
    Data = 3,
    Estimation = 4,
}

#[derive(Debug)]
pub struct CliError {
    pub kind: ExitKind,
    pub message: String,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        CliError {
            kind: ExitKind::Usage,
            message: message.into(),
        }
    }

    pub fn data(message: impl Into<String>) -> Self {
        CliError {
            kind: ExitKind::Data,
            message: message.into(),
        }
    }

    pub fn io(path: &Path, err: std::io::Error) -> Self {
        CliError::data(format!("{}: {err}", path.display()))
    }

    pub fn code(&self) -> i32 {
        self.kind as i32
    }

    pub fn context(mut self, what: impl fmt::Display) -> Self {
        self.message = format!("{what}: {}", self.message);
        self
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<Error> for CliError {
    fn from(err: Error) -> Self {
        let kind = match &err {
            Error::InvalidConfig(_) | Error::InvalidScenario(_) => ExitKind::Usage,
            Error::EstimationFailed(_) | Error::SingularCovariance { .. } => ExitKind::Estimation,
            _ => ExitKind::Data,
        };
        CliError {
            kind,
            message: err.to_string(),
        }
    }
}
