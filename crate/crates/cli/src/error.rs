use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("{0}")]
    Core(#[from] fav_core::Error),

    #[error("malformed {file}: {why}")]
    Parse { file: String, why: String },

    #[error("{0}")]
    Mismatch(String),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.display().to_string(),
            source,
        }
    }

    pub fn parse(path: &Path, why: impl Into<String>) -> Self {
        Self::Parse {
            file: path.display().to_string(),
            why: why.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
