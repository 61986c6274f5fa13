use crate::error::{Error, Result};
use crate::imaging::{BooleanMask, ColorSpace, HsvBound, PreprocessConfig, RasterImage};

fn hue_in_range(h: f64, lower: f64, upper: f64) -> bool {
    if lower <= upper {
        h >= lower && h <= upper
    } else {
        h >= lower || h <= upper
    }
}

pub(crate) fn hsv_in_bounds(px: &[f64], lower: &HsvBound, upper: &HsvBound) -> bool {
    hue_in_range(px[0], lower.hue, upper.hue)
        && px[1] >= lower.saturation
        && px[1] <= upper.saturation
        && px[2] >= lower.value
        && px[2] <= upper.value
}

/// Marks pixels whose HSV triple lies inside the configured bounds
/// (inclusive). A lower hue above the upper hue selects the interval that
/// wraps through 0°.
pub fn compute_mask(img: &RasterImage, config: &PreprocessConfig) -> Result<BooleanMask> {
    img.expect_space(ColorSpace::Hsv)?;
    let bits = img.data().chunks_exact(3).map(|px| hsv_in_bounds(px, &config.hsv_lower, &config.hsv_upper)).collect();
    BooleanMask::new(img.width(), img.height(), bits)
}

/// Blacks out background pixels; foreground pixels are copied unchanged.
pub fn apply_mask(img: &RasterImage, mask: &BooleanMask) -> Result<RasterImage> {
    img.expect_space(ColorSpace::Rgb8)?;
    if img.width() != mask.width() || img.height() != mask.height() {
        return Err(Error::Shape(format!(
            "mask {}x{} does not match image {}x{}",
            mask.width(),
            mask.height(),
            img.width(),
            img.height()
        )));
    }
    let c = img.channels();
    let mut out = img.data().to_vec();
    for (px, keep) in out.chunks_exact_mut(c).zip(mask.bits()) {
        if !keep {
            px.fill(0.0);
        }
    }
    Ok(RasterImage::from_parts_unchecked(img.width(), img.height(), c, ColorSpace::Rgb8, out))
}
