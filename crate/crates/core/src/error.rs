use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("not found: {0}")]
    NotFound(String),

    #[error("schema error: {0}")]
    Schema(String),

    #[error("io error at {path}: {message}")]
    Io { path: PathBuf, message: String },

    #[error("contract violated: {0}")]
    Contract(String),

    /// A loss or gradient term became non-finite. `term` names the first offending component.
    #[error("non-finite value in `{term}`{}", checkpoint.as_ref().map(|p| format!(" (last good checkpoint: {})", p.display())).unwrap_or_default())]
    Numeric {
        term: String,
        checkpoint: Option<PathBuf>,
    },

    #[error("dataset carries no ground-truth latents")]
    MissingTruth,

    #[error("ground-truth column {0} is constant; importances are undefined")]
    DegenerateColumn(usize),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, err: impl std::fmt::Display) -> Self {
        Error::Io {
            path: path.into(),
            message: err.to_string(),
        }
    }

    pub(crate) fn numeric(term: impl Into<String>) -> Self {
        Error::Numeric {
            term: term.into(),
            checkpoint: None,
        }
    }
}
