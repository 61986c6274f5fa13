use std::path::PathBuf;

use thiserror::Error;

use crate::imaging::ColorSpace;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("expected a {expected:?} image, got {actual:?}")]
    ColorSpace { expected: ColorSpace, actual: ColorSpace },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("dataset layout error: {0}")]
    Layout(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("training diverged at epoch {epoch}: loss became {loss}")]
    Diverged { epoch: usize, loss: f64 },

    #[error("preprocessing fingerprint {serving} does not match the model's {trained}")]
    Incompatible { trained: String, serving: String },

    #[error("model artifact {path}: {reason}")]
    Artifact { path: PathBuf, reason: String },

    #[error("sample {sample}: {source}")]
    Sample {
        sample: String,
        #[source]
        source: Box<Error>,
    },

    #[error("cannot decode image {path}: {source}")]
    Decode {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
