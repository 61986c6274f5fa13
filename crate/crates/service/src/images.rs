use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::error::{ServiceError, ServiceResult};

/// Uploaded images stored under the hash of their bytes.
#[derive(Debug, Clone)]
pub struct ImageStore {
    root: PathBuf,
}

pub const IMAGE_DIR: &str = "images";

impl ImageStore {
    /// `root` is the store directory; files go to `root/images/`.
    pub fn open(root: &Path) -> ServiceResult<Self> {
        let dir = root.join(IMAGE_DIR);
        std::fs::create_dir_all(&dir).map_err(|e| ServiceError::io(&dir, e))?;
        Ok(ImageStore { root: root.to_path_buf() })
    }

    /// Saves `bytes` and returns the path relative to the store root.
    pub fn put(&self, bytes: &[u8], extension: &str) -> ServiceResult<String> {
        let name = format!("{IMAGE_DIR}/{}.{extension}", hex::encode(Sha256::digest(bytes)));
        let path = self.root.join(&name);
        if !path.exists() {
            let tmp = self.root.join(format!("{name}.{}.tmp", uuid::Uuid::new_v4()));
            std::fs::write(&tmp, bytes).map_err(|e| ServiceError::io(&tmp, e))?;
            std::fs::rename(&tmp, &path).map_err(|e| ServiceError::io(&path, e))?;
        }
        Ok(name)
    }

    pub fn resolve(&self, image_ref: &str) -> PathBuf {
        self.root.join(image_ref)
    }
}
