use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = CliError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] sceno_core::Error),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("{}: {source}", path.display())]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("{0}")]
    Usage(String),
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }

    /// Every failure maps to exit code 1.
    pub fn exit_code(&self) -> i32 {
        1
    }

    /// Message plus the raw simulator output behind a failed evaluation.
    pub fn detailed(&self) -> String {
        match self {
            CliError::Core(sceno_core::Error::Eval { source, .. }) => match &source.raw {
                Some(raw) => format!("{self}\nraw simulator output: {raw}"),
                None => self.to_string(),
            },
            _ => self.to_string(),
        }
    }
}
