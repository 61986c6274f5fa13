use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, RwLock};

use axum::body::Bytes;
use axum::extract::multipart::MultipartError;
use axum::extract::multipart::MultipartRejection;
use axum::extract::rejection::QueryRejection;
use axum::extract::{DefaultBodyLimit, Multipart, Path, Query, State};
use axum::http::StatusCode;
use axum::routing::{get, post, put};
use axum::{Json, Router};
use roast_core::imaging::{decode_image, PreprocessConfig};
use roast_core::model::{check_compatible, load_model, predict, ModelArtifact};
use serde::{Deserialize, Serialize};

use crate::error::{ServiceError, ServiceResult};
use crate::images::ImageStore;
use crate::store::{HistoryRecord, RecordStore};

pub const DEFAULT_UPLOAD_LIMIT: usize = 16 * 1024 * 1024;
pub const DESCRIPTION_LIMIT: usize = 4 * 1024;
pub const DEFAULT_PAGE: usize = 100;
pub const RECORD_LOG: &str = "records.jsonl";

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub bind: SocketAddr,
    pub model_path: Option<PathBuf>,
    /// Holds `records.jsonl` and `images/`.
    pub store_dir: PathBuf,
    pub upload_limit: usize,
    /// Serving preprocessing; defaults to the one recorded in the model.
    pub preprocess_path: Option<PathBuf>,
    pub allow_fingerprint_mismatch: bool,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            bind: ([127, 0, 0, 1], 8080).into(),
            model_path: None,
            store_dir: PathBuf::from("roast-store"),
            upload_limit: DEFAULT_UPLOAD_LIMIT,
            preprocess_path: None,
            allow_fingerprint_mismatch: false,
        }
    }
}

#[derive(Debug)]
pub struct LoadedModel {
    pub artifact: ModelArtifact,
    pub preprocess: PreprocessConfig,
    pub allow_mismatch: bool,
    /// Hex SHA-256 of the serialized artifact.
    pub digest: String,
}

impl LoadedModel {
    pub fn new(
        artifact: ModelArtifact,
        preprocess: Option<PreprocessConfig>,
        allow_mismatch: bool,
    ) -> ServiceResult<Self> {
        let preprocess = preprocess.unwrap_or_else(|| artifact.meta.preprocess_config.clone());
        check_compatible(&artifact, &preprocess, allow_mismatch)?;
        let digest = artifact.digest()?;
        Ok(LoadedModel { artifact, preprocess, allow_mismatch, digest })
    }
}

#[derive(Debug)]
pub struct AppState {
    model: RwLock<Option<Arc<LoadedModel>>>,
    pub store: RecordStore,
    pub images: ImageStore,
    pub upload_limit: usize,
}

impl AppState {
    /// Opens the store; no model is loaded yet.
    pub fn open(store_dir: &std::path::Path, upload_limit: usize) -> ServiceResult<Self> {
        Ok(AppState {
            model: RwLock::new(None),
            store: RecordStore::open(&store_dir.join(RECORD_LOG))?,
            images: ImageStore::open(store_dir)?,
            upload_limit,
        })
    }

    pub fn from_config(config: &ServiceConfig) -> ServiceResult<Self> {
        let state = Self::open(&config.store_dir, config.upload_limit)?;
        if let Some(path) = &config.model_path {
            let artifact = load_model(path)?;
            let preprocess = config.preprocess_path.as_deref().map(PreprocessConfig::load).transpose()?;
            state.set_model(LoadedModel::new(artifact, preprocess, config.allow_fingerprint_mismatch)?);
            log::info!("loaded model {}", path.display());
        } else {
            log::warn!("no model configured; /predict will answer 503");
        }
        Ok(state)
    }

    pub fn set_model(&self, model: LoadedModel) {
        *self.model.write().expect("model lock") = Some(Arc::new(model));
    }

    pub fn model(&self) -> Option<Arc<LoadedModel>> {
        self.model.read().expect("model lock").clone()
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    let limit = state.upload_limit;
    Router::new()
        .route("/predict", post(predict_handler))
        .route("/records", get(list_records))
        .route("/records/{id}/description", put(set_description))
        .route("/health", get(health))
        .layer(DefaultBodyLimit::max(limit))
        .with_state(state)
}

fn multipart_error(e: MultipartError) -> ServiceError {
    if e.status() == StatusCode::PAYLOAD_TOO_LARGE {
        ServiceError::TooLarge(e.body_text())
    } else {
        ServiceError::BadRequest(e.body_text())
    }
}

fn check_description(text: &str) -> ServiceResult<()> {
    if text.len() > DESCRIPTION_LIMIT {
        return Err(ServiceError::TooLarge(format!(
            "description is {} bytes, limit is {DESCRIPTION_LIMIT}",
            text.len()
        )));
    }
    Ok(())
}

async fn predict_handler(
    State(state): State<Arc<AppState>>,
    multipart: Result<Multipart, MultipartRejection>,
) -> ServiceResult<Json<HistoryRecord>> {
    let model = state.model().ok_or(ServiceError::ModelNotLoaded)?;
    let mut multipart = multipart.map_err(|e| ServiceError::BadRequest(e.body_text()))?;
    let mut image: Option<Bytes> = None;
    let mut description = String::new();
    while let Some(field) = multipart.next_field().await.map_err(multipart_error)? {
        match field.name() {
            Some("description") => description = field.text().await.map_err(multipart_error)?,
            Some("image") | Some("file") => image = Some(field.bytes().await.map_err(multipart_error)?),
            _ => {
                field.bytes().await.map_err(multipart_error)?;
            }
        }
    }
    let bytes = image.ok_or_else(|| ServiceError::BadRequest("missing multipart field \"image\"".into()))?;
    check_description(&description)?;

    let worker = state.clone();
    let record = tokio::task::spawn_blocking(move || -> ServiceResult<HistoryRecord> {
        let decoded = decode_image(&bytes).map_err(|e| ServiceError::NotAnImage(e.to_string()))?;
        let prediction = predict(&model.artifact, &decoded, &model.preprocess, model.allow_mismatch)?;
        let ext = match image_format(&bytes) {
            Some(ext) => ext,
            None => return Err(ServiceError::NotAnImage("unrecognized format".into())),
        };
        let image_ref = worker.images.put(&bytes, ext)?;
        let record = HistoryRecord::new(&prediction, description, image_ref);
        worker.store.insert(record.clone())?;
        Ok(record)
    })
    .await
    .map_err(|e| ServiceError::Internal(e.to_string()))??;
    Ok(Json(record))
}

fn image_format(bytes: &[u8]) -> Option<&'static str> {
    if bytes.starts_with(b"\x89PNG\r\n\x1a\n") {
        Some("png")
    } else if bytes.starts_with(&[0xFF, 0xD8, 0xFF]) {
        Some("jpg")
    } else {
        None
    }
}

#[derive(Debug, Deserialize)]
struct Paging {
    limit: Option<usize>,
    offset: Option<usize>,
}

async fn list_records(
    State(state): State<Arc<AppState>>,
    paging: Result<Query<Paging>, QueryRejection>,
) -> ServiceResult<Json<Vec<HistoryRecord>>> {
    let Query(p) = paging.map_err(|e| ServiceError::BadRequest(e.body_text()))?;
    Ok(Json(state.store.list(p.limit.unwrap_or(DEFAULT_PAGE), p.offset.unwrap_or(0))))
}

async fn set_description(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Bytes,
) -> ServiceResult<Json<HistoryRecord>> {
    if body.len() > DESCRIPTION_LIMIT {
        return Err(ServiceError::TooLarge(format!(
            "description is {} bytes, limit is {DESCRIPTION_LIMIT}",
            body.len()
        )));
    }
    let text =
        String::from_utf8(body.to_vec()).map_err(|_| ServiceError::BadRequest("description must be UTF-8".into()))?;
    let record = tokio::task::spawn_blocking(move || state.store.set_description(&id, text))
        .await
        .map_err(|e| ServiceError::Internal(e.to_string()))??;
    Ok(Json(record))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub model_loaded: bool,
    pub model_fingerprint: Option<String>,
    pub preprocess_fingerprint: Option<String>,
    pub backbone_id: Option<String>,
    pub records: usize,
}

async fn health(State(state): State<Arc<AppState>>) -> Json<Health> {
    let model = state.model();
    Json(Health {
        status: "ok".into(),
        model_loaded: model.is_some(),
        model_fingerprint: model.as_ref().map(|m| m.digest.clone()),
        preprocess_fingerprint: model.as_ref().map(|m| m.artifact.meta.preprocess_fingerprint.clone()),
        backbone_id: model.as_ref().map(|m| m.artifact.meta.backbone_id.clone()),
        records: state.store.len(),
    })
}

/// Binds and serves until Ctrl-C.
pub async fn serve(config: ServiceConfig) -> ServiceResult<()> {
    let state = Arc::new(AppState::from_config(&config)?);
    let listener = tokio::net::TcpListener::bind(config.bind)
        .await
        .map_err(|e| ServiceError::Internal(format!("cannot bind {}: {e}", config.bind)))?;
    log::info!("listening on http://{}", config.bind);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(|e| ServiceError::Internal(e.to_string()))
}
