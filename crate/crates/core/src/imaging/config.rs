use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// An HSV bound: hue in degrees, saturation and value as fractions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HsvBound {
    pub hue: f64,
    pub saturation: f64,
    pub value: f64,
}

impl HsvBound {
    pub const fn new(hue: f64, saturation: f64, value: f64) -> Self {
        HsvBound { hue, saturation, value }
    }
}

/// Parameters of the deterministic preprocessing pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PreprocessConfig {
    pub blur_kernel_size: usize,
    pub blur_sigma: f64,
    pub hsv_lower: HsvBound,
    pub hsv_upper: HsvBound,
    pub target_width: usize,
    pub target_height: usize,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            blur_kernel_size: 5,
            blur_sigma: 1.0,
            // Keeps saturated, non-dark pixels: neutral lightbox and table
            // backgrounds fall below the saturation floor.
            hsv_lower: HsvBound::new(0.0, 0.15, 0.10),
            hsv_upper: HsvBound::new(360.0, 1.0, 1.0),
            target_width: 224,
            target_height: 224,
        }
    }
}

impl PreprocessConfig {
    pub fn validate(&self) -> Result<()> {
        if self.blur_kernel_size == 0 || self.blur_kernel_size.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "blur kernel size must be odd and positive, got {}",
                self.blur_kernel_size
            )));
        }
        if !(self.blur_sigma > 0.0 && self.blur_sigma.is_finite()) {
            return Err(Error::Config(format!("blur sigma must be positive, got {}", self.blur_sigma)));
        }
        for b in [self.hsv_lower, self.hsv_upper] {
            if !(0.0..=360.0).contains(&b.hue)
                || !(0.0..=1.0).contains(&b.saturation)
                || !(0.0..=1.0).contains(&b.value)
            {
                return Err(Error::Config(format!("HSV bound out of range: {b:?}")));
            }
        }
        // Hue may wrap (lower > upper); saturation and value may not.
        if self.hsv_lower.saturation > self.hsv_upper.saturation || self.hsv_lower.value > self.hsv_upper.value {
            return Err(Error::Config("hsv_lower exceeds hsv_upper".into()));
        }
        if self.target_width == 0 || self.target_height == 0 {
            return Err(Error::Config("target size must be positive".into()));
        }
        Ok(())
    }

    pub fn target_size(&self) -> (usize, usize) {
        (self.target_width, self.target_height)
    }

    /// Hex SHA-256 of the canonical JSON encoding. Models record this so a
    /// server can refuse images prepared differently from training data.
    pub fn fingerprint(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&canonical))
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&s)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml_string()).map_err(|e| Error::io(path, e))
    }
}

/// Ranges for random training-time geometric augmentation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    /// Maximum absolute rotation in degrees.
    pub rotation_range: f64,
    /// Zoom factor is drawn from `1 ± zoom_range`.
    pub zoom_range: f64,
    /// Maximum shift as a fraction of width/height.
    pub shift_range: f64,
    pub horizontal_flip: bool,
    pub vertical_flip: bool,
    pub seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            rotation_range: 20.0,
            zoom_range: 0.1,
            shift_range: 0.1,
            horizontal_flip: true,
            vertical_flip: true,
            seed: 0,
        }
    }
}

impl AugmentConfig {
    pub fn identity() -> Self {
        AugmentConfig {
            rotation_range: 0.0,
            zoom_range: 0.0,
            shift_range: 0.0,
            horizontal_flip: false,
            vertical_flip: false,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=180.0).contains(&self.rotation_range) {
            return Err(Error::Config(format!("rotation_range {} not in [0, 180]", self.rotation_range)));
        }
        if !(0.0..1.0).contains(&self.zoom_range) {
            return Err(Error::Config(format!("zoom_range {} not in [0, 1)", self.zoom_range)));
        }
        if !(0.0..=0.5).contains(&self.shift_range) {
            return Err(Error::Config(format!("shift_range {} not in [0, 0.5]", self.shift_range)));
        }
        Ok(())
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        AugmentConfig { seed, ..self.clone() }
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}
