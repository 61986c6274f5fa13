use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::class::RoastClass;
use crate::error::{Error, Result};
use crate::imaging::{save_png, BooleanMask, ColorSpace, RasterImage};

/// Bean body color: per-channel mean and the standard deviation of the
/// per-bean draw around it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ColorModel {
    pub mean: [f64; 3],
    pub spread: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassColors {
    pub dark: ColorModel,
    pub green: ColorModel,
    pub light: ColorModel,
    pub medium: ColorModel,
}

impl Default for ClassColors {
    fn default() -> Self {
        let m = |r, g, b| ColorModel { mean: [r, g, b], spread: 12.0 };
        ClassColors {
            dark: m(60.0, 40.0, 30.0),
            green: m(110.0, 140.0, 90.0),
            light: m(170.0, 120.0, 70.0),
            medium: m(120.0, 75.0, 45.0),
        }
    }
}

impl ClassColors {
    pub fn get(&self, class: RoastClass) -> &ColorModel {
        match class {
            RoastClass::Dark => &self.dark,
            RoastClass::Green => &self.green,
            RoastClass::Light => &self.light,
            RoastClass::Medium => &self.medium,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackgroundMode {
    LightboxWhite,
    NaturalWood,
    GlassJar,
}

impl BackgroundMode {
    pub fn tag(self) -> &'static str {
        match self {
            BackgroundMode::LightboxWhite => "lightbox",
            BackgroundMode::NaturalWood => "natural",
            BackgroundMode::GlassJar => "jar",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub per_class_count: usize,
    pub image_width: usize,
    pub image_height: usize,
    pub class_colors: ClassColors,
    pub background_modes: Vec<BackgroundMode>,
    /// Minimum RGB distance between any two class mean colors.
    pub min_color_separation: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            per_class_count: 100,
            image_width: 384,
            image_height: 384,
            class_colors: ClassColors::default(),
            background_modes: vec![
                BackgroundMode::LightboxWhite,
                BackgroundMode::NaturalWood,
                BackgroundMode::GlassJar,
            ],
            min_color_separation: 40.0,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.per_class_count == 0 {
            return Err(Error::Config("per_class_count must be at least 1".into()));
        }
        if self.image_width < 32 || self.image_height < 32 {
            return Err(Error::Config("synthetic images must be at least 32x32".into()));
        }
        if self.background_modes.is_empty() {
            return Err(Error::Config("no background modes".into()));
        }
        for (i, a) in RoastClass::ALL.iter().enumerate() {
            let ma = self.class_colors.get(*a);
            if !ma.spread.is_finite() || ma.spread < 0.0 || ma.mean.iter().any(|c| !(0.0..=255.0).contains(c)) {
                return Err(Error::Config(format!("bad color model for {a}")));
            }
            for b in &RoastClass::ALL[i + 1..] {
                let mb = self.class_colors.get(*b);
                let d = ma.mean.iter().zip(&mb.mean).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
                if d < self.min_color_separation {
                    return Err(Error::Config(format!(
                        "{a} and {b} mean colors are {d:.1} apart, below {}",
                        self.min_color_separation
                    )));
                }
            }
        }
        Ok(())
    }

    /// Seed of image `index` of `class` in a generated dataset.
    pub fn image_seed(&self, class: RoastClass, index: usize) -> u64 {
        splitmix(self.seed ^ splitmix((class.index() as u64) << 32 | index as u64))
    }
}

pub(crate) fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// A rendered image with its ground truth.
#[derive(Debug, Clone)]
pub struct SynthImage {
    pub image: RasterImage,
    pub bean_mask: BooleanMask,
    pub bean_fraction: f64,
    pub background: BackgroundMode,
    /// Global illumination multiplier.
    pub brightness: f64,
}

struct Bean {
    cx: f64,
    cy: f64,
    a: f64,
    b: f64,
    cos: f64,
    sin: f64,
}

impl Bean {
    /// Coordinates along the major and minor axes, scaled so the rim is at
    /// radius 1.
    fn local(&self, x: f64, y: f64) -> (f64, f64) {
        let (dx, dy) = (x - self.cx, y - self.cy);
        ((dx * self.cos + dy * self.sin) / self.a, (-dx * self.sin + dy * self.cos) / self.b)
    }
}

/// Renders 8–20 elliptical beans with a center crease over a background.
///
/// Geometry, background and lighting come from a generator seeded by
/// `seed` alone; bean colors come from a second stream keyed by the class.
/// Two classes rendered with one seed therefore share every pixel outside
/// the beans and the exact bean footprint.
pub fn synthesize_bean_image(class: RoastClass, config: &SynthConfig, seed: u64) -> SynthImage {
    let (w, h) = (config.image_width, config.image_height);
    let mut geo = ChaCha8Rng::seed_from_u64(seed);
    let mut col = ChaCha8Rng::seed_from_u64(seed ^ splitmix(0xC0FFEE + class.index() as u64));
    let unit = Normal::new(0.0, 1.0).expect("unit normal");

    let background = config.background_modes[geo.gen_range(0..config.background_modes.len())];
    let brightness = match background {
        BackgroundMode::LightboxWhite => geo.gen_range(1.0..1.08),
        _ => geo.gen_range(0.9..1.0),
    };

    let mut data = vec![0.0f64; w * h * 3];
    let grain_freq = geo.gen_range(0.05..0.12);
    let grain_phase = geo.gen_range(0.0..std::f64::consts::TAU);
    let jar = (
        geo.gen_range(0.15..0.3) * w as f64,
        geo.gen_range(0.7..0.85) * w as f64,
        geo.gen_range(0.05..0.15) * h as f64,
        geo.gen_range(0.85..0.95) * h as f64,
    );
    for y in 0..h {
        for x in 0..w {
            let base: [f64; 3] = match background {
                BackgroundMode::LightboxWhite => {
                    let (nx, ny) = (x as f64 / w as f64 - 0.5, y as f64 / h as f64 - 0.5);
                    let v = 240.0 - 25.0 * (nx * nx + ny * ny);
                    [v, v - 2.0, v - 5.0]
                }
                BackgroundMode::NaturalWood => {
                    let g = 12.0 * (y as f64 * grain_freq + grain_phase + 0.02 * x as f64).sin();
                    [172.0 + g, 165.0 + g, 157.0 + g]
                }
                BackgroundMode::GlassJar => {
                    let inside = (x as f64) > jar.0 && (x as f64) < jar.1 && (y as f64) > jar.2 && (y as f64) < jar.3;
                    if inside {
                        [186.0, 190.0, 197.0]
                    } else {
                        [205.0, 205.0, 207.0]
                    }
                }
            };
            let n = 2.0 * unit.sample(&mut geo);
            let px = &mut data[(y * w + x) * 3..(y * w + x + 1) * 3];
            for c in 0..3 {
                px[c] = base[c] + n;
            }
        }
    }

    let count = geo.gen_range(8..=20);
    let size = w.min(h) as f64;
    let beans: Vec<Bean> = (0..count)
        .map(|_| {
            let a = size * geo.gen_range(0.065..0.09);
            let b = a * geo.gen_range(0.6..0.75);
            let angle: f64 = geo.gen_range(0.0..std::f64::consts::PI);
            Bean {
                cx: geo.gen_range(a..w as f64 - a),
                cy: geo.gen_range(a..h as f64 - a),
                a,
                b,
                cos: angle.cos(),
                sin: angle.sin(),
            }
        })
        .collect();

    let model = config.class_colors.get(class);
    let body: Vec<[f64; 3]> = beans
        .iter()
        .map(|_| {
            let shift = model.spread * unit.sample(&mut col).clamp(-2.0, 2.0);
            // Mostly a shared brightness shift plus a little per-channel tint.
            let mut c = model.mean;
            for ch in &mut c {
                *ch += shift + 0.3 * model.spread * unit.sample(&mut col);
            }
            c
        })
        .collect();

    let mut bits = vec![false; w * h];
    for y in 0..h {
        for x in 0..w {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            // Later beans are drawn on top.
            let hit = beans.iter().enumerate().rev().find_map(|(i, bean)| {
                let (u, v) = bean.local(px, py);
                let r2 = u * u + v * v;
                (r2 <= 1.0).then_some((i, u, v, r2))
            });
            if let Some((i, u, v, r2)) = hit {
                bits[y * w + x] = true;
                let mut shade = 1.0 - 0.1 * r2;
                if v.abs() < 0.12 && u.abs() < 0.8 {
                    shade *= 0.85;
                }
                let p = &mut data[(y * w + x) * 3..(y * w + x + 1) * 3];
                for c in 0..3 {
                    p[c] = body[i][c] * shade + 3.0 * unit.sample(&mut col);
                }
            }
        }
    }

    if background == BackgroundMode::GlassJar {
        // Thin specular reflection off the glass, drawn over everything.
        let x0 = jar.0 + 0.2 * (jar.1 - jar.0);
        for y in 0..h {
            for x in 0..w {
                let d = (x as f64 - x0 - 0.1 * y as f64).abs();
                if d < 2.0 {
                    let p = &mut data[(y * w + x) * 3..(y * w + x + 1) * 3];
                    for c in p.iter_mut() {
                        *c = 0.85 * *c + 0.15 * 255.0;
                    }
                }
            }
        }
    }

    for v in &mut data {
        *v = (*v * brightness).round().clamp(0.0, 255.0);
    }
    let bean_mask = BooleanMask::new(w, h, bits).expect("mask dims");
    let bean_fraction = bean_mask.fraction();
    SynthImage {
        image: RasterImage::new(w, h, 3, ColorSpace::Rgb8, data).expect("valid synthetic image"),
        bean_mask,
        bean_fraction,
        background,
        brightness,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    /// Relative to the dataset root, `/`-separated.
    pub path: String,
    pub class: RoastClass,
    pub image_seed: u64,
    pub background: BackgroundMode,
    pub bean_fraction: f64,
    pub sha256: String,
}

/// Written as `manifest.json` next to the class directories.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthManifest {
    pub seed: u64,
    pub config: SynthConfig,
    pub files: Vec<ManifestEntry>,
}

impl SynthManifest {
    pub const FILE_NAME: &'static str = "manifest.json";

    pub fn load(root: &Path) -> Result<Self> {
        let path = root.join(Self::FILE_NAME);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

fn cleanup(created_dirs: &[PathBuf], written: &[PathBuf]) {
    for f in written {
        let _ = fs::remove_file(f);
    }
    for d in created_dirs.iter().rev() {
        let _ = fs::remove_dir(d);
    }
}

/// Writes `per_class_count` PNGs per class into the class-per-directory
/// layout plus a manifest. On failure, files and directories created by
/// this call are removed.
pub fn synthesize_dataset(config: &SynthConfig, root: &Path) -> Result<SynthManifest> {
    config.validate()?;
    let mut created_dirs = Vec::new();
    if !root.exists() {
        fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
        created_dirs.push(root.to_path_buf());
    }
    for class in RoastClass::ALL {
        let dir = root.join(class.label());
        if !dir.exists() {
            if let Err(e) = fs::create_dir(&dir) {
                cleanup(&created_dirs, &[]);
                return Err(Error::io(&dir, e));
            }
            created_dirs.push(dir);
        }
    }

    let jobs: Vec<(RoastClass, usize)> =
        RoastClass::ALL.iter().flat_map(|&c| (0..config.per_class_count).map(move |i| (c, i))).collect();
    let results: Vec<Result<(PathBuf, ManifestEntry)>> = jobs
        .par_iter()
        .map(|&(class, index)| {
            let image_seed = config.image_seed(class, index);
            let synth = synthesize_bean_image(class, config, image_seed);
            let rel = format!("{}/{}-{index:05}.png", class.label(), synth.background.tag());
            let path = root.join(&rel);
            save_png(&synth.image, &path)?;
            let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
            let entry = ManifestEntry {
                path: rel,
                class,
                image_seed,
                background: synth.background,
                bean_fraction: synth.bean_fraction,
                sha256: hex::encode(Sha256::digest(&bytes)),
            };
            Ok((path, entry))
        })
        .collect();

    let mut written = Vec::new();
    let mut files = Vec::new();
    let mut first_err = None;
    for r in results {
        match r {
            Ok((path, entry)) => {
                written.push(path);
                files.push(entry);
            }
            Err(e) => {
                first_err.get_or_insert(e);
            }
        }
    }
    let manifest = SynthManifest { seed: config.seed, config: config.clone(), files };
    let manifest_path = root.join(SynthManifest::FILE_NAME);
    let write_manifest = || -> Result<()> {
        let text = serde_json::to_string_pretty(&manifest)?;
        fs::write(&manifest_path, text).map_err(|e| Error::io(&manifest_path, e))
    };
    if let Some(e) = first_err.map(Err).unwrap_or_else(write_manifest).err() {
        written.push(manifest_path.clone());
        cleanup(&created_dirs, &written);
        return Err(e);
    }
    Ok(manifest)
}
