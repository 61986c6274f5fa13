use crate::error::{Error, Result};
use crate::imaging::{ColorSpace, RasterImage};

/// Hexcone conversion of one pixel given as levels in `[0, 255]`.
/// Returns (hue°, saturation, value); achromatic pixels get hue 0.
pub fn rgb_pixel_to_hsv(r: f64, g: f64, b: f64) -> (f64, f64, f64) {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let v = max / 255.0;
    let s = if max == 0.0 { 0.0 } else { delta / max };
    if delta == 0.0 {
        return (0.0, s, v);
    }
    let sector = if max == r {
        ((g - b) / delta).rem_euclid(6.0)
    } else if max == g {
        (b - r) / delta + 2.0
    } else {
        (r - g) / delta + 4.0
    };
    let mut h = 60.0 * sector;
    if h >= 360.0 {
        h -= 360.0;
    }
    (h, s, v)
}

/// Inverse hexcone conversion. Returns levels in `[0, 255]`, not rounded.
pub fn hsv_pixel_to_rgb(h: f64, s: f64, v: f64) -> (f64, f64, f64) {
    let c = v * s;
    let hp = h.rem_euclid(360.0) / 60.0;
    let x = c * (1.0 - (hp % 2.0 - 1.0).abs());
    let (r1, g1, b1) = match hp as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    ((r1 + m) * 255.0, (g1 + m) * 255.0, (b1 + m) * 255.0)
}

pub fn rgb_to_hsv(img: &RasterImage) -> Result<RasterImage> {
    img.expect_space(ColorSpace::Rgb8)?;
    if img.channels() != 3 {
        return Err(Error::Shape("HSV conversion needs three channels".into()));
    }
    let mut out = Vec::with_capacity(img.data().len());
    for px in img.data().chunks_exact(3) {
        let (h, s, v) = rgb_pixel_to_hsv(px[0], px[1], px[2]);
        out.extend_from_slice(&[h, s, v]);
    }
    Ok(RasterImage::from_parts_unchecked(img.width(), img.height(), 3, ColorSpace::Hsv, out))
}

pub fn hsv_to_rgb(img: &RasterImage) -> Result<RasterImage> {
    img.expect_space(ColorSpace::Hsv)?;
    let mut out = Vec::with_capacity(img.data().len());
    for px in img.data().chunks_exact(3) {
        let (r, g, b) = hsv_pixel_to_rgb(px[0], px[1], px[2]);
        out.extend([r, g, b].map(|c| c.round().clamp(0.0, 255.0)));
    }
    Ok(RasterImage::from_parts_unchecked(img.width(), img.height(), 3, ColorSpace::Rgb8, out))
}
