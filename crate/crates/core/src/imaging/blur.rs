use crate::error::{Error, Result};
use crate::imaging::{ColorSpace, PreprocessConfig, RasterImage};

/// Normalized 1-D Gaussian taps. The 2-D kernel is their outer product,
/// which equals the normalized `exp(-(dx² + dy²) / 2σ²)` grid.
pub fn gaussian_kernel_1d(size: usize, sigma: f64) -> Result<Vec<f64>> {
    if size == 0 || size.is_multiple_of(2) {
        return Err(Error::Config(format!("blur kernel size must be odd, got {size}")));
    }
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::Config(format!("blur sigma must be positive, got {sigma}")));
    }
    let r = (size / 2) as isize;
    let taps: Vec<f64> = (-r..=r).map(|d| (-((d * d) as f64) / (2.0 * sigma * sigma)).exp()).collect();
    let sum: f64 = taps.iter().sum();
    Ok(taps.into_iter().map(|t| t / sum).collect())
}

/// Full 2-D kernel, row-major `size x size`.
pub fn gaussian_kernel_2d(size: usize, sigma: f64) -> Result<Vec<f64>> {
    let k = gaussian_kernel_1d(size, sigma)?;
    Ok(k.iter().flat_map(|a| k.iter().map(move |b| a * b)).collect())
}

/// Separable blur of an interleaved buffer with edge replication. No
/// rounding is applied.
pub(crate) fn blur_interleaved(data: &[f64], width: usize, height: usize, channels: usize, kernel: &[f64]) -> Vec<f64> {
    let r = (kernel.len() / 2) as isize;
    let clamp = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
    let mut tmp = vec![0.0; data.len()];
    for y in 0..height {
        for x in 0..width {
            for c in 0..channels {
                let mut acc = 0.0;
                for (k, w) in kernel.iter().enumerate() {
                    let sx = clamp(x as isize + k as isize - r, width);
                    acc += w * data[(y * width + sx) * channels + c];
                }
                tmp[(y * width + x) * channels + c] = acc;
            }
        }
    }
    let mut out = vec![0.0; data.len()];
    for y in 0..height {
        for x in 0..width {
            for c in 0..channels {
                let mut acc = 0.0;
                for (k, w) in kernel.iter().enumerate() {
                    let sy = clamp(y as isize + k as isize - r, height);
                    acc += w * tmp[(sy * width + x) * channels + c];
                }
                out[(y * width + x) * channels + c] = acc;
            }
        }
    }
    out
}

/// Gaussian denoising of an RGB8 image. Results are rounded back to
/// integer levels.
pub fn gaussian_blur(img: &RasterImage, config: &PreprocessConfig) -> Result<RasterImage> {
    img.expect_space(ColorSpace::Rgb8)?;
    let kernel = gaussian_kernel_1d(config.blur_kernel_size, config.blur_sigma)?;
    let out = blur_interleaved(img.data(), img.width(), img.height(), img.channels(), &kernel)
        .into_iter()
        .map(|v| v.round().clamp(0.0, 255.0))
        .collect();
    Ok(RasterImage::from_parts_unchecked(img.width(), img.height(), img.channels(), ColorSpace::Rgb8, out))
}
