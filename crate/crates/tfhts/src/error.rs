use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::checkpoint::CheckpointError;
use crate::embedding::EmbeddingFileError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] tfhts_core::Error),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
    #[error("{}: {source}", path.display())]
    Embedding {
        path: PathBuf,
        source: EmbeddingFileError,
    },
    #[error("{}: {source}", path.display())]
    Checkpoint {
        path: PathBuf,
        source: CheckpointError,
    },
    /// Malformed series CSV or text sidecar.
    #[error("{}: {reason}", path.display())]
    Input { path: PathBuf, reason: String },
    #[error("config: {0}")]
    Config(String),
}

impl Error {
    pub fn io(path: &Path, source: io::Error) -> Self {
        Error::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn input(path: &Path, reason: impl Into<String>) -> Self {
        Error::Input {
            path: path.to_path_buf(),
            reason: reason.into(),
        }
    }

    /// Bad configuration or bad input data, as opposed to a failure while
    /// running (I/O, divergence).
    pub fn is_validation(&self) -> bool {
        match self {
            Error::Core(e) => e.is_validation(),
            Error::Io { .. } => false,
            Error::Embedding { .. } | Error::Checkpoint { .. } | Error::Input { .. } | Error::Config(_) => true,
        }
    }
}
