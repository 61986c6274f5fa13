//! Labeled bean photos: class-per-directory loading, stratified splits and
//! folds, and a synthetic generator standing in for real photographs.

mod loader;
mod split;
mod synth;

use std::path::PathBuf;
use std::sync::Arc;

pub use loader::{load_dataset, LoadedDataset};
pub use split::{make_folds, split_dataset, DatasetSplit, FoldPlan, SplitRatios};
pub(crate) use synth::splitmix;
pub use synth::{
    synthesize_bean_image, synthesize_dataset, BackgroundMode, ClassColors, ColorModel, ManifestEntry, SynthConfig,
    SynthImage, SynthManifest,
};

use crate::class::RoastClass;
use crate::error::Result;
use crate::imaging::{load_image, RasterImage};

#[derive(Debug, Clone)]
pub enum ImageRef {
    Path(PathBuf),
    Memory { name: String, image: Arc<RasterImage> },
}

#[derive(Debug, Clone)]
pub struct LabeledSample {
    pub image: ImageRef,
    pub class: RoastClass,
    /// Capture condition, e.g. `lightbox` or `natural`.
    pub source_tag: String,
}

impl LabeledSample {
    pub fn from_path(path: impl Into<PathBuf>, class: RoastClass, source_tag: impl Into<String>) -> Self {
        LabeledSample { image: ImageRef::Path(path.into()), class, source_tag: source_tag.into() }
    }

    pub fn in_memory(name: impl Into<String>, image: RasterImage, class: RoastClass) -> Self {
        LabeledSample {
            image: ImageRef::Memory { name: name.into(), image: Arc::new(image) },
            class,
            source_tag: "memory".into(),
        }
    }

    /// Stable identifier: the file path or the in-memory name.
    pub fn id(&self) -> String {
        match &self.image {
            ImageRef::Path(p) => p.display().to_string(),
            ImageRef::Memory { name, .. } => name.clone(),
        }
    }

    pub fn load(&self) -> Result<RasterImage> {
        match &self.image {
            ImageRef::Path(p) => load_image(p),
            ImageRef::Memory { image, .. } => Ok(image.as_ref().clone()),
        }
    }
}

/// Number of samples per class, indexed by [`RoastClass::index`].
pub fn class_counts(samples: &[LabeledSample]) -> [usize; RoastClass::COUNT] {
    let mut counts = [0; RoastClass::COUNT];
    for s in samples {
        counts[s.class.index()] += 1;
    }
    counts
}
