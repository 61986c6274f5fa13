use std::path::{Path, PathBuf};

use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde::Serialize;

pub type ServiceResult<T> = Result<T, ServiceError>;

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error("upload is not a decodable PNG or JPEG image: {0}")]
    NotAnImage(String),

    #[error("bad request: {0}")]
    BadRequest(String),

    #[error("payload too large: {0}")]
    TooLarge(String),

    #[error("no record with id {0}")]
    NotFound(String),

    #[error("no model is loaded")]
    ModelNotLoaded,

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Core(#[from] roast_core::Error),

    #[error("internal error: {0}")]
    Internal(String),
}

impl ServiceError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        ServiceError::Io { path: path.to_path_buf(), source }
    }

    pub fn status(&self) -> StatusCode {
        match self {
            ServiceError::NotAnImage(_) | ServiceError::BadRequest(_) => StatusCode::BAD_REQUEST,
            ServiceError::TooLarge(_) => StatusCode::PAYLOAD_TOO_LARGE,
            ServiceError::NotFound(_) => StatusCode::NOT_FOUND,
            ServiceError::ModelNotLoaded => StatusCode::SERVICE_UNAVAILABLE,
            ServiceError::Io { .. } | ServiceError::Core(_) | ServiceError::Internal(_) => {
                StatusCode::INTERNAL_SERVER_ERROR
            }
        }
    }

    /// Stable machine-readable code returned in error bodies.
    pub fn code(&self) -> &'static str {
        match self {
            ServiceError::NotAnImage(_) => "not_an_image",
            ServiceError::BadRequest(_) => "bad_request",
            ServiceError::TooLarge(_) => "payload_too_large",
            ServiceError::NotFound(_) => "not_found",
            ServiceError::ModelNotLoaded => "model_not_loaded",
            ServiceError::Io { .. } | ServiceError::Core(_) | ServiceError::Internal(_) => "internal",
        }
    }
}

#[derive(Debug, Serialize)]
struct ErrorBody {
    error: &'static str,
    message: String,
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        if self.status().is_server_error() {
            log::error!("{self}");
        }
        (self.status(), Json(ErrorBody { error: self.code(), message: self.to_string() })).into_response()
    }
}
