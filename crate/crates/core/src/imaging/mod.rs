//! Image preprocessing: denoise, segment beans from the background in HSV,
//! scale to the model input size and normalize to `[0, 1]`, plus random
//! geometric augmentation for training.

mod blur;
mod color;
mod config;
mod geometry;
mod mask;
mod raster;

use std::path::Path;

pub use blur::{gaussian_blur, gaussian_kernel_1d, gaussian_kernel_2d};
pub use color::{hsv_pixel_to_rgb, hsv_to_rgb, rgb_pixel_to_hsv, rgb_to_hsv};
pub use config::{AugmentConfig, HsvBound, PreprocessConfig};
pub use geometry::{apply_augment, augment, resize, AugmentParams};
pub use mask::{apply_mask, compute_mask};
pub use raster::{BooleanMask, ColorSpace, RasterImage};

use crate::error::{Error, Result};

/// Maps RGB8 levels to `[0, 1]` by dividing by 255.
pub fn normalize(img: &RasterImage) -> Result<RasterImage> {
    img.expect_space(ColorSpace::Rgb8)?;
    let data = img.data().iter().map(|v| v / 255.0).collect();
    Ok(RasterImage::from_parts_unchecked(img.width(), img.height(), img.channels(), ColorSpace::Float01, data))
}

/// Intermediate products of [`preprocess`], kept for previews.
#[derive(Debug, Clone)]
pub struct PreprocessStages {
    pub blurred: RasterImage,
    pub hsv: RasterImage,
    pub mask: BooleanMask,
    pub masked: RasterImage,
    /// Masked image at the target size, still in RGB8.
    pub resized: RasterImage,
}

pub fn preprocess_stages(img: &RasterImage, config: &PreprocessConfig) -> Result<PreprocessStages> {
    img.expect_space(ColorSpace::Rgb8)?;
    if img.channels() != 3 {
        return Err(Error::Shape("preprocessing needs an RGB image".into()));
    }
    config.validate()?;
    let blurred = gaussian_blur(img, config)?;
    let hsv = rgb_to_hsv(&blurred)?;
    let mask = compute_mask(&hsv, config)?;
    let masked = apply_mask(&blurred, &mask)?;
    let resized = resize(&masked, config.target_size())?;
    Ok(PreprocessStages { blurred, hsv, mask, masked, resized })
}

/// The model-input pipeline: blur, HSV mask, background removal on the
/// blurred image, resize, normalize.
pub fn preprocess(img: &RasterImage, config: &PreprocessConfig) -> Result<RasterImage> {
    normalize(&preprocess_stages(img, config)?.resized)
}

/// Decodes a PNG or JPEG file into an RGB8 image.
pub fn load_image(path: &Path) -> Result<RasterImage> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_image(&bytes).map_err(|e| match e {
        Error::Decode { source, .. } => Error::Decode { path: path.to_path_buf(), source },
        other => other,
    })
}

/// Decodes PNG or JPEG bytes into an RGB8 image.
pub fn decode_image(bytes: &[u8]) -> Result<RasterImage> {
    let format = image::guess_format(bytes).map_err(|source| Error::Decode { path: "<memory>".into(), source })?;
    if !matches!(format, image::ImageFormat::Png | image::ImageFormat::Jpeg) {
        return Err(Error::Data(format!("unsupported image format {format:?}")));
    }
    let decoded = image::load_from_memory_with_format(bytes, format)
        .map_err(|source| Error::Decode { path: "<memory>".into(), source })?
        .to_rgb8();
    RasterImage::from_rgb8(decoded.width() as usize, decoded.height() as usize, decoded.as_raw())
}

/// Writes an image as PNG. Float images are scaled to 8-bit; HSV images
/// are converted back to RGB first.
pub fn save_png(img: &RasterImage, path: &Path) -> Result<()> {
    let rgb;
    let img = if img.color_space() == ColorSpace::Hsv {
        rgb = hsv_to_rgb(img)?;
        &rgb
    } else {
        img
    };
    let scale = if img.color_space() == ColorSpace::Float01 { 255.0 } else { 1.0 };
    let bytes: Vec<u8> = img.data().iter().map(|v| (v * scale).round().clamp(0.0, 255.0) as u8).collect();
    let (w, h) = (img.width() as u32, img.height() as u32);
    let result = if img.channels() == 3 {
        image::RgbImage::from_raw(w, h, bytes).expect("buffer size").save_with_format(path, image::ImageFormat::Png)
    } else {
        image::GrayImage::from_raw(w, h, bytes).expect("buffer size").save_with_format(path, image::ImageFormat::Png)
    };
    result.map_err(|source| Error::Decode { path: path.to_path_buf(), source })
}

/// Renders a mask as a black/white PNG.
pub fn save_mask_png(mask: &BooleanMask, path: &Path) -> Result<()> {
    let data = mask.bits().iter().map(|&b| if b { 255.0 } else { 0.0 }).collect();
    let img = RasterImage::from_parts_unchecked(mask.width(), mask.height(), 1, ColorSpace::Rgb8, data);
    save_png(&img, path)
}
