//! HTTP prediction service: classify uploaded bean photos and keep a
//! history of predictions with user descriptions.
//!
//! | method | path | |
//! |--------|------|-|
//! | POST | `/predict` | multipart `image` (PNG/JPEG) and optional `description` |
//! | GET | `/records?limit&offset` | newest first |
//! | PUT | `/records/{id}/description` | plain-text body, at most 4 KiB |
//! | GET | `/health` | model and store status |

mod app;
mod error;
mod images;
mod store;

pub use app::{
    router, serve, AppState, Health, LoadedModel, ServiceConfig, DEFAULT_PAGE, DEFAULT_UPLOAD_LIMIT, DESCRIPTION_LIMIT,
    RECORD_LOG,
};
pub use error::{ServiceError, ServiceResult};
pub use images::{ImageStore, IMAGE_DIR};
pub use store::{round_percent, HistoryRecord, RecordStore};
