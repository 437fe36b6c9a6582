use std::path::PathBuf;

use copo_core::CopoError;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{origin}: {message}")]
    Config { origin: String, message: String },
    #[error("cannot write to {}: {source}", path.display())]
    Output {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot read {}: {source}", path.display())]
    Input {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Runtime(#[from] CopoError),
    #[error("{0}")]
    Failed(String),
}

impl CliError {
    pub fn config(origin: impl Into<String>, message: impl Into<String>) -> Self {
        Self::Config {
            origin: origin.into(),
            message: message.into(),
        }
    }

    /// 2 for bad input or an unusable output location, 1 for failures during a run.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config { .. } | Self::Output { .. } | Self::Input { .. } => 2,
            Self::Runtime(_) | Self::Failed(_) => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
