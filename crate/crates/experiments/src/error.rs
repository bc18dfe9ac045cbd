use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = ExpError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum ExpError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Idx(#[from] IdxError),

    #[error("config {path}: {message}")]
    Config { path: String, message: String },

    #[error("{context}: {source}")]
    Core {
        context: String,
        #[source]
        source: teleport_core::Error,
    },

    #[error("writing {path}: {message}")]
    Output { path: PathBuf, message: String },
}

impl ExpError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        ExpError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        ExpError::Config {
            path: path.into(),
            message: message.into(),
        }
    }

    pub fn output(path: impl Into<PathBuf>, message: impl ToString) -> Self {
        ExpError::Output {
            path: path.into(),
            message: message.to_string(),
        }
    }
}

/// Attaches the experiment context to a core error.
pub trait CoreContext<T> {
    fn context(self, context: impl Into<String>) -> Result<T>;
}

impl<T> CoreContext<T> for teleport_core::Result<T> {
    fn context(self, context: impl Into<String>) -> Result<T> {
        self.map_err(|source| ExpError::Core {
            context: context.into(),
            source,
        })
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IdxError {
    #[error("{file}: magic number {found:#010x}, expected {expected:#010x}")]
    BadMagic {
        file: String,
        expected: u32,
        found: u32,
    },

    #[error("{file}: truncated at byte offset {offset}, needed {needed} bytes in total")]
    Truncated {
        file: String,
        offset: usize,
        needed: usize,
    },

    #[error("{images} images but {labels} labels")]
    CountMismatch { images: usize, labels: usize },

    #[error("{file}: label {label} at index {index} is outside 0..{classes}")]
    LabelOutOfRange {
        file: String,
        index: usize,
        label: u8,
        classes: usize,
    },
}
