use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::imaging::{AugmentConfig, ColorSpace, RasterImage};

/// Bilinear resize with half-pixel centers (no corner alignment). Source
/// coordinates are clamped to the image, so constants stay constant. RGB8
/// results are rounded to the nearest level.
pub fn resize(img: &RasterImage, target: (usize, usize)) -> Result<RasterImage> {
    let (tw, th) = target;
    if tw == 0 || th == 0 {
        return Err(Error::Config(format!("target size {tw}x{th} must be positive")));
    }
    if (tw, th) == (img.width(), img.height()) {
        return Ok(img.clone());
    }
    let (w, h, c) = (img.width(), img.height(), img.channels());
    let src = img.data();
    let axis = |out: usize, n_out: usize, n_in: usize| -> (usize, usize, f64) {
        let pos = ((out as f64 + 0.5) * n_in as f64 / n_out as f64 - 0.5).clamp(0.0, (n_in - 1) as f64);
        let i0 = pos.floor() as usize;
        let i1 = (i0 + 1).min(n_in - 1);
        (i0, i1, pos - i0 as f64)
    };
    let xs: Vec<_> = (0..tw).map(|x| axis(x, tw, w)).collect();
    let round = img.color_space() == ColorSpace::Rgb8;
    let mut out = Vec::with_capacity(tw * th * c);
    for y in 0..th {
        let (y0, y1, fy) = axis(y, th, h);
        for &(x0, x1, fx) in &xs {
            for ch in 0..c {
                let at = |xx: usize, yy: usize| src[(yy * w + xx) * c + ch];
                let top = at(x0, y0) * (1.0 - fx) + at(x1, y0) * fx;
                let bottom = at(x0, y1) * (1.0 - fx) + at(x1, y1) * fx;
                let v = top * (1.0 - fy) + bottom * fy;
                out.push(if round { v.round() } else { v });
            }
        }
    }
    Ok(RasterImage::from_parts_unchecked(tw, th, c, img.color_space(), out))
}

/// The concrete transform drawn for one augmentation call.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentParams {
    pub angle_degrees: f64,
    pub zoom: f64,
    pub shift_x: f64,
    pub shift_y: f64,
    pub flip_horizontal: bool,
    pub flip_vertical: bool,
}

impl AugmentParams {
    /// Draws parameters in a fixed order so a seed fully determines them.
    pub fn sample<R: Rng>(config: &AugmentConfig, width: usize, height: usize, rng: &mut R) -> Self {
        let mut sym = |range: f64| (rng.gen::<f64>() * 2.0 - 1.0) * range;
        let angle_degrees = sym(config.rotation_range);
        let zoom = 1.0 + sym(config.zoom_range);
        let shift_x = sym(config.shift_range) * width as f64;
        let shift_y = sym(config.shift_range) * height as f64;
        let flip_horizontal = rng.gen_bool(0.5) && config.horizontal_flip;
        let flip_vertical = rng.gen_bool(0.5) && config.vertical_flip;
        AugmentParams { angle_degrees, zoom, shift_x, shift_y, flip_horizontal, flip_vertical }
    }
}

/// Applies flips, then rotation and zoom about the image center, then a
/// shift. Pixels that map from outside the frame are filled with 0.
pub fn apply_augment(img: &RasterImage, p: &AugmentParams) -> RasterImage {
    let (w, h, c) = (img.width(), img.height(), img.channels());
    let src = img.data();
    let (cx, cy) = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
    let (sin, cos) = p.angle_degrees.to_radians().sin_cos();
    let mut out = vec![0.0; src.len()];
    let fetch = |x: isize, y: isize, ch: usize| -> f64 {
        if x < 0 || y < 0 || x >= w as isize || y >= h as isize {
            0.0
        } else {
            src[(y as usize * w + x as usize) * c + ch]
        }
    };
    for y in 0..h {
        for x in 0..w {
            // Inverse map: undo shift, then rotation/zoom, then flips.
            let dx = x as f64 - cx - p.shift_x;
            let dy = y as f64 - cy - p.shift_y;
            let mut sx = (cos * dx + sin * dy) / p.zoom + cx;
            let mut sy = (-sin * dx + cos * dy) / p.zoom + cy;
            if p.flip_horizontal {
                sx = (w as f64 - 1.0) - sx;
            }
            if p.flip_vertical {
                sy = (h as f64 - 1.0) - sy;
            }
            let (x0, y0) = (sx.floor(), sy.floor());
            let (fx, fy) = (sx - x0, sy - y0);
            let (x0, y0) = (x0 as isize, y0 as isize);
            let dst = &mut out[(y * w + x) * c..(y * w + x + 1) * c];
            for (ch, d) in dst.iter_mut().enumerate() {
                let mut v = fetch(x0, y0, ch) * (1.0 - fx) * (1.0 - fy);
                if fx > 0.0 {
                    v += fetch(x0 + 1, y0, ch) * fx * (1.0 - fy);
                }
                if fy > 0.0 {
                    v += fetch(x0, y0 + 1, ch) * (1.0 - fx) * fy;
                    if fx > 0.0 {
                        v += fetch(x0 + 1, y0 + 1, ch) * fx * fy;
                    }
                }
                *d = v.clamp(0.0, 1.0);
            }
        }
    }
    RasterImage::from_parts_unchecked(w, h, c, img.color_space(), out)
}

/// Random rotation, zoom, shift and flips of a normalized image, driven
/// entirely by `config.seed`.
pub fn augment(img: &RasterImage, config: &AugmentConfig) -> Result<RasterImage> {
    img.expect_space(ColorSpace::Float01)?;
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let params = AugmentParams::sample(config, img.width(), img.height(), &mut rng);
    Ok(apply_augment(img, &params))
}
