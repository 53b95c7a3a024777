use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("unsupported raster format for {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("training error: {0}")]
    Training(String),

    #[error("stratification error: class {class} has {count} samples, fewer than {folds} folds")]
    Stratification {
        class: String,
        count: usize,
        folds: usize,
    },

    #[error("model file error: {0}")]
    Model(String),

    #[error("generation error: {0}")]
    Generation(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
