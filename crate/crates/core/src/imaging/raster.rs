use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Interpretation of the values stored in a [`RasterImage`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ColorSpace {
    /// Integer levels in `[0, 255]`.
    Rgb8,
    /// Hue in degrees `[0, 360)`, saturation and value in `[0, 1]`.
    Hsv,
    /// Normalized intensities in `[0, 1]`.
    Float01,
}

/// Row-major `height x width x channels` pixel grid tagged with its color space.
#[derive(Debug, Clone, PartialEq)]
pub struct RasterImage {
    width: usize,
    height: usize,
    channels: usize,
    color_space: ColorSpace,
    data: Vec<f64>,
}

impl RasterImage {
    pub fn new(width: usize, height: usize, channels: usize, color_space: ColorSpace, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Shape(format!("empty image {width}x{height}")));
        }
        if !matches!(channels, 1 | 3) {
            return Err(Error::Shape(format!("unsupported channel count {channels}")));
        }
        if color_space == ColorSpace::Hsv && channels != 3 {
            return Err(Error::Shape("HSV images need three channels".into()));
        }
        if data.len() != width * height * channels {
            return Err(Error::Shape(format!("{} values for a {width}x{height}x{channels} image", data.len())));
        }
        let img = RasterImage { width, height, channels, color_space, data };
        img.check_ranges()?;
        Ok(img)
    }

    /// Builds an RGB8 image from interleaved bytes.
    pub fn from_rgb8(width: usize, height: usize, bytes: &[u8]) -> Result<Self> {
        Self::new(width, height, 3, ColorSpace::Rgb8, bytes.iter().map(|&b| b as f64).collect())
    }

    /// Constant-colored image.
    pub fn filled(width: usize, height: usize, color_space: ColorSpace, pixel: &[f64]) -> Result<Self> {
        let data = pixel.iter().copied().cycle().take(width * height * pixel.len()).collect();
        Self::new(width, height, pixel.len(), color_space, data)
    }

    pub(crate) fn from_parts_unchecked(
        width: usize,
        height: usize,
        channels: usize,
        color_space: ColorSpace,
        data: Vec<f64>,
    ) -> Self {
        debug_assert_eq!(data.len(), width * height * channels);
        RasterImage { width, height, channels, color_space, data }
    }

    fn check_ranges(&self) -> Result<()> {
        let bad =
            |i: usize, v: f64| Err(Error::Data(format!("value {v} at {i} out of range for {:?}", self.color_space)));
        for (i, &v) in self.data.iter().enumerate() {
            let ok = match self.color_space {
                ColorSpace::Rgb8 => (0.0..=255.0).contains(&v) && v.fract() == 0.0,
                ColorSpace::Float01 => (0.0..=1.0).contains(&v),
                ColorSpace::Hsv => {
                    if i % 3 == 0 {
                        (0.0..360.0).contains(&v)
                    } else {
                        (0.0..=1.0).contains(&v)
                    }
                }
            };
            if !ok {
                return bad(i, v);
            }
        }
        Ok(())
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn color_space(&self) -> ColorSpace {
        self.color_space
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    pub fn pixel(&self, x: usize, y: usize) -> &[f64] {
        let i = (y * self.width + x) * self.channels;
        &self.data[i..i + self.channels]
    }

    pub(crate) fn expect_space(&self, expected: ColorSpace) -> Result<()> {
        if self.color_space == expected {
            Ok(())
        } else {
            Err(Error::ColorSpace { expected, actual: self.color_space })
        }
    }

    /// Interleaved bytes of an RGB8 image.
    pub fn to_rgb8_bytes(&self) -> Result<Vec<u8>> {
        self.expect_space(ColorSpace::Rgb8)?;
        Ok(self.data.iter().map(|&v| v as u8).collect())
    }

    /// Same pixels in `channels x height x width` order as `f32`.
    pub fn to_chw_f32(&self) -> Vec<f32> {
        let hw = self.pixel_count();
        let mut out = vec![0.0f32; hw * self.channels];
        for (p, px) in self.data.chunks_exact(self.channels).enumerate() {
            for (c, v) in px.iter().enumerate() {
                out[c * hw + p] = *v as f32;
            }
        }
        out
    }
}

/// Per-pixel foreground flags; `true` marks a bean pixel to keep.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BooleanMask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl BooleanMask {
    pub fn new(width: usize, height: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != width * height {
            return Err(Error::Shape(format!("{} mask bits for {width}x{height}", bits.len())));
        }
        Ok(BooleanMask { width, height, bits })
    }

    pub fn filled(width: usize, height: usize, value: bool) -> Self {
        BooleanMask { width, height, bits: vec![value; width * height] }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    pub fn fraction(&self) -> f64 {
        self.count() as f64 / self.bits.len() as f64
    }
}
