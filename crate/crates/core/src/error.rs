use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Incompatible tensor shapes. `op` names the operation, `detail` the axes involved.
    #[error("{op}: dimension error: {detail}")]
    Dimension { op: &'static str, detail: String },

    #[error("{op}: invalid value: {detail}")]
    Validation { op: &'static str, detail: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("manifest error: {0}")]
    Manifest(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("could not decode image {path}: {detail}")]
    Image { path: PathBuf, detail: String },

    /// Wrong magic bytes or unsupported version.
    #[error("checkpoint format error: {0}")]
    Format(String),

    /// Structurally broken file; `offset` is the byte position where reading failed.
    #[error("checkpoint corrupted at byte {offset}: {detail}")]
    Corrupt { offset: usize, detail: String },

    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },

    #[error("non-finite gradient in parameter {0}")]
    NonFiniteGradient(String),

    #[error("timer resolution too coarse: {0}")]
    Resolution(String),

    /// Transport, status or decoding failure of an external text generator.
    #[error("external generator: {0}")]
    External(String),
}

impl Error {
    pub(crate) fn dim(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Dimension {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn invalid(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Validation {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the command-line front end.
    ///
    /// 2 usage/config/layout, 3 numerical failure, 4 incompatible artifact.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::NonFiniteLoss { .. } | Error::NonFiniteGradient(_) | Error::Resolution(_) => 3,
            Error::Format(_) | Error::Corrupt { .. } => 4,
            _ => 2,
        }
    }
}
