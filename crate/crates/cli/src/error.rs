use std::path::PathBuf;

use dcnet_core::Error as CoreError;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad flags, bad configuration values, missing required inputs.
    #[error("{0}")]
    Usage(String),

    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: CoreError,
    },

    #[error(transparent)]
    Core(#[from] CoreError),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl CliError {
    pub fn usage(msg: impl Into<String>) -> Self {
        CliError::Usage(msg.into())
    }

    fn core(&self) -> Option<&CoreError> {
        match self {
            CliError::File { source, .. } => Some(source),
            CliError::Core(e) => Some(e),
            _ => None,
        }
    }

    /// 1 usage, 2 data, 3 non-finite numbers.
    pub fn exit_code(&self) -> i32 {
        match (self, self.core()) {
            (CliError::Usage(_), _) => 1,
            (_, Some(CoreError::Config(_))) => 1,
            (_, Some(CoreError::NonFinite(_))) => 3,
            _ => 2,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(e.into())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Core(e.into())
    }
}

/// Attaches the path a core error came from.
pub trait Context<T> {
    fn at(self, path: impl Into<PathBuf>) -> Result<T>;
}

impl<T, E: Into<CoreError>> Context<T> for std::result::Result<T, E> {
    fn at(self, path: impl Into<PathBuf>) -> Result<T> {
        self.map_err(|e| CliError::File {
            path: path.into(),
            source: e.into(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        assert_eq!(CliError::usage("x").exit_code(), 1);
        assert_eq!(CliError::Core(CoreError::Config("x".into())).exit_code(), 1);
        assert_eq!(
            CliError::Core(CoreError::NonFinite("nan".into())).exit_code(),
            3
        );
        assert_eq!(CliError::Core(CoreError::Ratio("r".into())).exit_code(), 2);
        let io: Result<()> = Err(std::io::Error::other("gone")).at("a.pten");
        assert_eq!(io.unwrap_err().exit_code(), 2);
    }
}
