use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid or inconsistent configuration. `key` is a dotted key path when known.
    #[error("configuration error{}: {message}", key.as_ref().map(|k| format!(" at `{k}`")).unwrap_or_default())]
    Config { key: Option<String>, message: String },

    #[error("data error: {0}")]
    Data(String),

    #[error("missing path `{}`", .0.display())]
    MissingPath(PathBuf),

    #[error(transparent)]
    Nn(#[from] styleshift_nn::NnError),

    #[error("gradient unavailable: {0}")]
    Gradient(String),

    #[error("non-finite loss at iteration {iteration}: {report}")]
    NonFiniteLoss { iteration: u64, report: String },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("evaluation error: {0}")]
    Evaluation(String),

    #[error("i/o error on `{}`: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },

    #[error("image error on `{}`: {source}", path.display())]
    Image { path: PathBuf, source: image::ImageError },
}

impl Error {
    pub fn config(message: impl Into<String>) -> Self {
        Error::Config { key: None, message: message.into() }
    }

    pub fn config_at(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config { key: Some(key.into()), message: message.into() }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// Short machine-readable category used by the command line front end.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Config { .. } => "config",
            Error::Data(_) | Error::MissingPath(_) => "data",
            Error::Nn(_) | Error::Gradient(_) => "model",
            Error::NonFiniteLoss { .. } => "training",
            Error::Checkpoint(_) => "checkpoint",
            Error::Evaluation(_) => "evaluation",
            Error::Io { .. } | Error::Image { .. } => "io",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
