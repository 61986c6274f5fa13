use std::fs;
use std::path::{Path, PathBuf};

use log::warn;

use crate::class::RoastClass;
use crate::dataset::LabeledSample;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Default)]
pub struct LoadedDataset {
    pub samples: Vec<LabeledSample>,
    /// Skipped files and empty class directories.
    pub warnings: Vec<String>,
}

fn is_image_name(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .map(|e| matches!(e.to_ascii_lowercase().as_str(), "png" | "jpg" | "jpeg"))
        .unwrap_or(false)
}

/// `natural-00012.png` -> `natural`; names without a dash are `unknown`.
fn source_tag(path: &Path) -> String {
    path.file_stem()
        .and_then(|s| s.to_str())
        .and_then(|s| s.split_once('-'))
        .map(|(tag, _)| tag.to_string())
        .unwrap_or_else(|| "unknown".to_string())
}

fn readable(path: &Path) -> std::result::Result<(), String> {
    image::ImageReader::open(path)
        .map_err(|e| e.to_string())?
        .with_guessed_format()
        .map_err(|e| e.to_string())?
        .into_dimensions()
        .map(|_| ())
        .map_err(|e| e.to_string())
}

/// Reads a `dark/ green/ light/ medium/` layout under `root`. Files come back
/// in lexicographic order within each class, classes in index order.
pub fn load_dataset(root: &Path) -> Result<LoadedDataset> {
    let mut out = LoadedDataset::default();
    for class in RoastClass::ALL {
        let dir = root.join(class.label());
        if !dir.is_dir() {
            return Err(Error::Layout(format!("missing class directory {}", dir.display())));
        }
        let mut paths: Vec<PathBuf> = fs::read_dir(&dir)
            .map_err(|e| Error::io(&dir, e))?
            .filter_map(|entry| entry.ok().map(|e| e.path()))
            .filter(|p| p.is_file())
            .collect();
        paths.sort();

        let before = out.samples.len();
        for path in paths {
            if !is_image_name(&path) {
                out.warnings.push(format!("skipped non-image file {}", path.display()));
                continue;
            }
            match readable(&path) {
                Ok(()) => {
                    let tag = source_tag(&path);
                    out.samples.push(LabeledSample::from_path(path, class, tag));
                }
                Err(e) => out.warnings.push(format!("unreadable image {}: {e}", path.display())),
            }
        }
        if out.samples.len() == before {
            out.warnings.push(format!("class directory {} has no images", dir.display()));
        }
    }
    for w in &out.warnings {
        warn!("{w}");
    }
    Ok(out)
}
