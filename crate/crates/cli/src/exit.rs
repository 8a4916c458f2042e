//! Exit-code contract: 0 success, 1 usage error, 2 data error, 3 internal
//! error.

use std::fmt;

use smad_core::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitKind {
    Usage = 1,
    Data = 2,
    Internal = 3,
}

#[derive(Debug)]
pub struct CliError {
    pub kind: ExitKind,
    pub message: String,
}

impl CliError {
    pub fn usage(message: impl fmt::Display) -> Self {
        Self {
            kind: ExitKind::Usage,
            message: message.to_string(),
        }
    }

    pub fn data(message: impl fmt::Display) -> Self {
        Self {
            kind: ExitKind::Data,
            message: message.to_string(),
        }
    }

    pub fn internal(message: impl fmt::Display) -> Self {
        Self {
            kind: ExitKind::Internal,
            message: message.to_string(),
        }
    }

    pub fn code(&self) -> i32 {
        self.kind as i32
    }

    /// Prefixes the message with context.
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

impl std::error::Error for CliError {}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let kind = match &e {
            Error::InvalidParam(_) => ExitKind::Usage,
            Error::Extractor { .. } => ExitKind::Internal,
            _ => ExitKind::Data,
        };
        Self {
            kind,
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::data(e)
    }
}

impl From<image::ImageError> for CliError {
    fn from(e: image::ImageError) -> Self {
        CliError::internal(format!("image encoding: {e}"))
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::internal(format!("JSON encoding: {e}"))
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::data(e)
    }
}

pub type CliResult<T = ()> = std::result::Result<T, CliError>;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn core_errors_map_to_codes() {
        assert_eq!(CliError::from(Error::InvalidParam("x".into())).code(), 1);
        assert_eq!(CliError::from(Error::NoRecords).code(), 2);
        assert_eq!(
            CliError::from(Error::Extractor {
                method: "ELA".into(),
                message: "codec".into()
            })
            .code(),
            3
        );
    }
}
