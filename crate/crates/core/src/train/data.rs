//! Synthetic "shapes on texture" classification data with ground-truth masks.
//!
//! Every image holds one foreground shape whose family is the class label.
//! Foreground and background share the per-image base color. With the
//! default settings the foreground grating is oriented at the family angle
//! `label·π/C` while the background grating takes the angle of a randomly
//! drawn family, so texture alone is ambiguous and the brighter foreground
//! region has to be located. Sample `i` is generated from its own ChaCha stream, so it does not
//! depend on how many samples are requested.

use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Shape families, in label order.
pub const SHAPE_FAMILIES: [&str; 5] = ["disk", "triangle", "cross", "square", "ring"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BackgroundTexture {
    /// Uniform random angle.
    Random,
    /// The family angle of a uniformly drawn family (possibly the image's own).
    AnyFamily,
    /// The family angle of a different family.
    OtherFamily,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthDataConfig {
    pub num_classes: usize,
    /// Square image side in pixels.
    pub size: usize,
    pub channels: usize,
    /// Patch side used to derive `patch_gt`.
    pub patch: usize,
    /// Foreground area bounds as fractions of the image.
    pub min_area: f64,
    pub max_area: f64,
    /// Standard deviation of per-pixel background noise.
    pub bg_noise: f64,
    /// Standard deviation of per-pixel foreground noise.
    pub fg_noise: f64,
    /// Magnitude of the foreground brightening offset (random nonnegative
    /// channel direction per image).
    pub contrast: f64,
    /// Amplitude of the foreground grating.
    pub fg_grating: f64,
    /// Amplitude of the background grating.
    pub bg_grating: f64,
    /// Grating period in pixels.
    pub grating_period: f64,
    /// When set, the foreground grating orientation is fixed per shape
    /// family (angle label·π/num_classes); otherwise it is drawn per image.
    pub family_texture: bool,
    /// Background grating orientation.
    pub background: BackgroundTexture,
    /// Draw grating phases per image; otherwise phase 0.
    pub random_phase: bool,
    /// Maximum center displacement from the image center, as a fraction of
    /// the free margin.
    pub jitter: f64,
    pub seed: u64,
}

impl Default for SynthDataConfig {
    fn default() -> Self {
        SynthDataConfig {
            num_classes: 3,
            size: 32,
            channels: 3,
            patch: 8,
            min_area: 0.35,
            max_area: 0.6,
            bg_noise: 0.04,
            fg_noise: 0.04,
            contrast: 0.25,
            fg_grating: 0.2,
            bg_grating: 0.2,
            grating_period: 3.0,
            family_texture: true,
            background: BackgroundTexture::AnyFamily,
            random_phase: true,
            jitter: 1.0,
            seed: 0,
        }
    }
}

impl SynthDataConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 || self.num_classes > SHAPE_FAMILIES.len() {
            return Err(Error::config(format!("num_classes must be in 2..={}", SHAPE_FAMILIES.len())));
        }
        if self.size < 8 || self.channels == 0 || self.patch == 0 || self.size % self.patch != 0 {
            return Err(Error::config(format!("image size {} must be ≥ 8 and divisible by patch {}", self.size, self.patch)));
        }
        if !(0.0 < self.min_area && self.min_area < self.max_area && self.max_area <= 0.6) {
            return Err(Error::config("area bounds must satisfy 0 < min_area < max_area ≤ 0.6"));
        }
        Ok(())
    }

    pub fn grid(&self) -> usize {
        self.size / self.patch
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    /// C × H × W in [0, 1], quantized to 8-bit levels.
    pub image: Array3<f64>,
    pub label: usize,
    /// H × W foreground support.
    pub gt_mask: Array2<bool>,
    /// One flag per patch, row-major over the patch grid.
    pub patch_gt: Vec<bool>,
}

/// Downsamples a pixel mask to patches by majority vote. A nonempty mask
/// with no majority patch marks the patch holding the most foreground pixels
/// (lowest index on ties), so small shapes still own a patch.
pub fn patch_majority(mask: &Array2<bool>, patch: usize) -> Vec<bool> {
    let (h, w) = mask.dim();
    let (gr, gc) = (h / patch, w / patch);
    let mut counts = vec![0usize; gr * gc];
    for ((y, x), &m) in mask.indexed_iter() {
        if m && y < gr * patch && x < gc * patch {
            counts[(y / patch) * gc + x / patch] += 1;
        }
    }
    let half = patch * patch / 2;
    let mut out: Vec<bool> = counts.iter().map(|&c| c > half).collect();
    if !out.iter().any(|&b| b) {
        if let Some((best, &c)) = counts.iter().enumerate().max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0))) {
            if c > 0 {
                out[best] = true;
            }
        }
    }
    out
}

fn inside(family: usize, x: f64, y: f64, r: f64) -> bool {
    match family {
        // disk
        0 => x * x + y * y <= r * r,
        // upward triangle inscribed in a circle of radius r·1.25
        1 => {
            let rr = r * 1.25;
            let top = -rr;
            let bottom = rr * 0.5;
            if y < top || y > bottom {
                return false;
            }
            let half_width = (y - top) / (bottom - top) * rr * 3f64.sqrt() / 2.0 * 1.0;
            x.abs() <= half_width
        }
        // plus-shaped cross
        2 => {
            let arm = r * 0.38;
            (x.abs() <= arm && y.abs() <= r) || (y.abs() <= arm && x.abs() <= r)
        }
        // square
        3 => x.abs() <= r * 0.85 && y.abs() <= r * 0.85,
        // ring
        _ => {
            let d2 = x * x + y * y;
            d2 <= r * r && d2 >= (r * 0.55) * (r * 0.55)
        }
    }
}

fn shape_mask(family: usize, size: usize, cx: f64, cy: f64, r: f64) -> Array2<bool> {
    Array2::from_shape_fn((size, size), |(py, px)| inside(family, px as f64 + 0.5 - cx, py as f64 + 0.5 - cy, r))
}

fn quantize(v: f64) -> f64 {
    (v.clamp(0.0, 1.0) * 255.0 + 0.5).floor() / 255.0
}

/// Generates sample `index` of the dataset described by `cfg`.
pub fn generate_sample(cfg: &SynthDataConfig, index: u64) -> Sample {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(index);
    let label = (index % cfg.num_classes as u64) as usize;
    let size = cfg.size as f64;
    let total = (cfg.size * cfg.size) as f64;

    // Radius search: draw a target area, then place the shape fully inside
    // the canvas. Oversized draws are clipped to the largest radius that fits.
    let mut mask = Array2::from_elem((cfg.size, cfg.size), false);
    for _ in 0..64 {
        let target = rng.random_range(cfg.min_area..cfg.max_area) * total;
        let mut r = (target / PI).sqrt();
        r = r.min(size / 2.0 - 1.0);
        let extent = if label == 1 { r * 1.25 } else { r };
        let margin = (size / 2.0 - extent).max(0.0) * cfg.jitter;
        let cx = size / 2.0 + rng.random_range(-1.0..=1.0) * margin;
        let cy = size / 2.0 + rng.random_range(-1.0..=1.0) * margin;
        mask = shape_mask(label, cfg.size, cx, cy, r);
        let area = mask.iter().filter(|&&m| m).count() as f64 / total;
        if area >= cfg.min_area && area <= cfg.max_area {
            break;
        }
        // Grow or shrink toward the bounds on the next draw.
    }

    let base: Vec<f64> = (0..cfg.channels).map(|_| rng.random_range(0.3..0.7)).collect();
    let mut offset: Vec<f64> = (0..cfg.channels).map(|_| rng.sample::<f64, _>(StandardNormal).abs()).collect();
    let norm = offset.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
    offset.iter_mut().for_each(|v| *v *= cfg.contrast / norm);
    let mut phase_bg = rng.random_range(0.0..2.0 * PI);
    let mut phase_fg = rng.random_range(0.0..2.0 * PI);
    if !cfg.random_phase {
        (phase_bg, phase_fg) = (0.0, 0.0);
    }
    let family_angle = |f: usize| f as f64 * PI / cfg.num_classes as f64;
    let theta_bg = match cfg.background {
        BackgroundTexture::Random => rng.random_range(0.0..PI),
        BackgroundTexture::AnyFamily => family_angle(rng.random_range(0..cfg.num_classes)),
        BackgroundTexture::OtherFamily => family_angle((label + 1 + rng.random_range(0..cfg.num_classes - 1)) % cfg.num_classes),
    };
    let theta_fg = if cfg.family_texture { family_angle(label) } else { rng.random_range(0.0..PI) };
    let omega = 2.0 * PI / cfg.grating_period;
    let wave = |theta: f64, phase: f64, x: f64, y: f64| (omega * (x * theta.cos() + y * theta.sin()) + phase).sin();

    let mut image = Array3::zeros((cfg.channels, cfg.size, cfg.size));
    for y in 0..cfg.size {
        for x in 0..cfg.size {
            let fg = mask[[y, x]];
            let (tex, noise_sd) = if fg {
                (cfg.fg_grating * wave(theta_fg, phase_fg, x as f64, y as f64), cfg.fg_noise)
            } else {
                (cfg.bg_grating * wave(theta_bg, phase_bg, x as f64, y as f64), cfg.bg_noise)
            };
            for c in 0..cfg.channels {
                let n: f64 = StandardNormal.sample(&mut rng);
                let mut v = base[c] + tex + noise_sd * n;
                if fg {
                    v += offset[c];
                }
                image[[c, y, x]] = quantize(v);
            }
        }
    }
    let patch_gt = patch_majority(&mask, cfg.patch);
    Sample { image, label, gt_mask: mask, patch_gt }
}

/// Fixed input standardization applied before the model sees an image.
pub const PIXEL_MEAN: f64 = 0.5;
pub const PIXEL_STD: f64 = 0.25;

/// (x − PIXEL_MEAN) / PIXEL_STD, elementwise.
pub fn normalize_image(image: &Array3<f64>) -> Array3<f64> {
    image.mapv(|v| (v - PIXEL_MEAN) / PIXEL_STD)
}

/// Generates `count` samples (indices 0..count).
pub fn generate_dataset(cfg: &SynthDataConfig, count: usize) -> Result<Vec<Sample>> {
    cfg.validate()?;
    if count == 0 {
        return Err(Error::config("count must be positive"));
    }
    use rayon::prelude::*;
    Ok((0..count as u64).into_par_iter().map(|i| generate_sample(cfg, i)).collect())
}
