//! Dataset directories.
//!
//! ```text
//! <dir>/manifest.json          generator config and one entry per sample
//! <dir>/images/<index>.ppm     (.pgm for one-channel data)
//! <dir>/masks/<index>.pgm      pixel foreground mask, 0 or 255
//! ```
//!
//! Generated images are already on the 8-bit grid, so export followed by
//! import reproduces them exactly.

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::Path;

use super::image::{read_image, write_image};
use crate::error::{Error, Result};
use crate::train::{patch_majority, Sample, SynthDataConfig};

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub index: usize,
    pub image: String,
    pub mask: String,
    pub label: usize,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config: SynthDataConfig,
    pub entries: Vec<ManifestEntry>,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub config: SynthDataConfig,
    pub train: Vec<Sample>,
    pub test: Vec<Sample>,
}

/// Writes `samples` under `dir`; the first `num_train` go to the train split.
pub fn export_dataset(dir: impl AsRef<Path>, cfg: &SynthDataConfig, samples: &[Sample], num_train: usize) -> Result<Manifest> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir.join("images"))?;
    fs::create_dir_all(dir.join("masks"))?;
    let ext = if cfg.channels == 1 { "pgm" } else { "ppm" };
    let mut entries = Vec::with_capacity(samples.len());
    for (i, s) in samples.iter().enumerate() {
        let image = format!("images/{i:05}.{ext}");
        let mask = format!("masks/{i:05}.pgm");
        write_image(&s.image, dir.join(&image))?;
        let m = s.gt_mask.mapv(|b| if b { 1.0 } else { 0.0 }).insert_axis(ndarray::Axis(0));
        write_image(&m, dir.join(&mask))?;
        let split = if i < num_train { Split::Train } else { Split::Test };
        entries.push(ManifestEntry { index: i, image, mask, label: s.label, split });
    }
    let manifest = Manifest { config: cfg.clone(), entries };
    fs::write(dir.join(MANIFEST), serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(manifest)
}

pub fn load_manifest(dir: impl AsRef<Path>) -> Result<Manifest> {
    let path = dir.as_ref().join(MANIFEST);
    let bytes = fs::read(&path).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
    Ok(serde_json::from_slice(&bytes)?)
}

pub fn import_dataset(dir: impl AsRef<Path>) -> Result<Dataset> {
    let dir = dir.as_ref();
    let manifest = load_manifest(dir)?;
    let cfg = manifest.config;
    cfg.validate()?;
    let mut train = Vec::new();
    let mut test = Vec::new();
    for e in &manifest.entries {
        let image: Array3<f64> = read_image(dir.join(&e.image))?;
        if image.dim() != (cfg.channels, cfg.size, cfg.size) {
            return Err(Error::shape(format!("{} is {:?}, manifest implies {:?}", e.image, image.dim(), (cfg.channels, cfg.size, cfg.size))));
        }
        let mask = read_image(dir.join(&e.mask))?;
        if mask.dim() != (1, cfg.size, cfg.size) {
            return Err(Error::shape(format!("{} is {:?}, expected a one-channel {}×{} mask", e.mask, mask.dim(), cfg.size, cfg.size)));
        }
        if e.label >= cfg.num_classes {
            return Err(Error::config(format!("entry {} has label {} ≥ {}", e.index, e.label, cfg.num_classes)));
        }
        let gt_mask: Array2<bool> = mask.index_axis(ndarray::Axis(0), 0).mapv(|v| v >= 0.5);
        let patch_gt = patch_majority(&gt_mask, cfg.patch);
        let sample = Sample { image, label: e.label, gt_mask, patch_gt };
        match e.split {
            Split::Train => train.push(sample),
            Split::Test => test.push(sample),
        }
    }
    Ok(Dataset { config: cfg, train, test })
}
