//! Flags, config files and the resolved per-command configuration.
//!
//! Every subcommand has a flag struct (all optional, so that unset flags do
//! not shadow file values) and a resolved struct with defaults. Resolution
//! layers defaults, then `--config` (TOML or JSON, keys spelled like the
//! flags), then flags.

use clap::{Args, Parser, Subcommand};
use crate_core::train::OptimizerKind;
use crate_core::Arch;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use std::path::{Path, PathBuf};

use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(name = "crate", version, about = "Train white-box CRATE models on synthetic shapes and analyse their attention")]
pub struct Cli {
    /// Worker threads for data-parallel work; results do not depend on it.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic shapes dataset (images, masks, manifest).
    GenerateData(GenerateArgs),
    /// Train one of the four architecture variants on a dataset.
    Train(TrainArgs),
    /// Class-token attention heatmaps and top-P masks per head.
    Attn(AnalysisArgs),
    /// PCA visualization of patch features.
    Pca(AnalysisArgs),
    /// Best-head attention mIoU against the ground-truth patch masks.
    SegMiou(AnalysisArgs),
    /// MaskCut object discovery and its simplified AP.
    Maskcut(AnalysisArgs),
    /// Per-layer coding rates and sparsity.
    Rates(AnalysisArgs),
    /// Finite-difference check of every parameter gradient.
    GradCheck(GradCheckArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::GenerateData(_) => "generate-data",
            Command::Train(_) => "train",
            Command::Attn(_) => "attn",
            Command::Pca(_) => "pca",
            Command::SegMiou(_) => "seg-miou",
            Command::Maskcut(_) => "maskcut",
            Command::Rates(_) => "rates",
            Command::GradCheck(_) => "grad-check",
        }
    }
}

#[derive(Debug, Args, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct GenerateArgs {
    /// TOML or JSON file with default values for these flags.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub classes: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub count: Option<usize>,
    /// Square image side in pixels.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub size: Option<usize>,
    /// Patch side used for the patch-level ground truth.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub patch: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub channels: Option<usize>,
    /// Fraction of samples in the train split.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train_fraction: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct GenerateConfig {
    #[serde(skip_serializing)]
    pub out: Option<PathBuf>,
    pub classes: usize,
    pub count: usize,
    pub size: usize,
    pub patch: usize,
    pub channels: usize,
    pub train_fraction: f64,
    pub seed: u64,
}

impl Default for GenerateConfig {
    fn default() -> Self {
        GenerateConfig { out: None, classes: 3, count: 2500, size: 32, patch: 8, channels: 3, train_fraction: 0.8, seed: 0 }
    }
}

#[derive(Debug, Args, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct TrainArgs {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Dataset directory written by generate-data.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    /// crate, crate-mlp, crate-mhsa or vit.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub arch: Option<Arch>,
    /// Number of layers.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub depth: Option<usize>,
    /// Token dimension; must be divisible by the head count.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dim: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub heads: Option<usize>,
    /// Patch side; defaults to the dataset's.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub patch: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epochs: Option<usize>,
    /// lion or sgd.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub opt: Option<OptimizerKind>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lr: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub weight_decay: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
    /// Seeds both the initialization and the shuffling.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct TrainConfig {
    pub data: Option<PathBuf>,
    #[serde(skip_serializing)]
    pub out: Option<PathBuf>,
    pub arch: Arch,
    pub depth: usize,
    pub dim: usize,
    pub heads: usize,
    pub patch: Option<usize>,
    pub epochs: usize,
    pub opt: OptimizerKind,
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            data: None,
            out: None,
            arch: Arch::Crate,
            depth: 4,
            dim: 64,
            heads: 4,
            patch: None,
            epochs: 20,
            opt: OptimizerKind::Lion,
            lr: 1e-4,
            weight_decay: 0.01,
            batch_size: 64,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum SplitChoice {
    Train,
    Test,
    All,
}

#[derive(Debug, Args, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct AnalysisArgs {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    /// 1-based layer; attn defaults to the penultimate layer, the others to the last.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub layer: Option<usize>,
    /// 1-based head; all heads when unset.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub head: Option<usize>,
    /// Fraction of patches kept in an attention mask.
    #[arg(long = "p", visible_alias = "P")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p: Option<f64>,
    /// MaskCut affinity threshold.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tau: Option<f64>,
    /// MaskCut object count.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[arg(long, value_enum)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub split: Option<SplitChoice>,
    /// Analyse at most this many images (0 = all).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub limit: Option<usize>,
    /// Number of images rendered to figures/.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub figures: Option<usize>,
    /// Seed of the random-mask baseline.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct AnalysisConfig {
    pub checkpoint: Option<PathBuf>,
    pub data: Option<PathBuf>,
    #[serde(skip_serializing)]
    pub out: Option<PathBuf>,
    pub layer: Option<usize>,
    pub head: Option<usize>,
    pub p: f64,
    pub tau: f64,
    pub n: usize,
    pub split: SplitChoice,
    pub limit: usize,
    pub figures: usize,
    pub seed: u64,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig {
            checkpoint: None,
            data: None,
            out: None,
            layer: None,
            head: None,
            p: 0.6,
            tau: 0.15,
            n: 3,
            split: SplitChoice::Test,
            limit: 0,
            figures: 4,
            seed: 0,
        }
    }
}

#[derive(Debug, Args, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct GradCheckArgs {
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Checkpoint to check; a tiny model of --arch is initialized when unset.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
    /// Dataset supplying the batch; synthetic samples matching the model when unset.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub arch: Option<Arch>,
    /// Batch size of the check.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub examples: Option<usize>,
    /// Central-difference step.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub step: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct GradCheckConfig {
    pub checkpoint: Option<PathBuf>,
    pub data: Option<PathBuf>,
    #[serde(skip_serializing)]
    pub out: Option<PathBuf>,
    pub arch: Arch,
    pub examples: usize,
    pub step: f64,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig { checkpoint: None, data: None, out: None, arch: Arch::Crate, examples: 3, step: 1e-5, seed: 0 }
    }
}

fn load_file(path: &Path) -> Result<Value, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::config(format!("cannot read config {}: {e}", path.display())))?;
    let is_toml = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("toml"));
    let value = if is_toml {
        let table: toml::Table = toml::from_str(&text).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
        serde_json::to_value(table).map_err(|e| CliError::config(e.to_string()))?
    } else {
        serde_json::from_str(&text).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?
    };
    if !value.is_object() {
        return Err(CliError::config(format!("{}: expected a table of flag values", path.display())));
    }
    Ok(value)
}

/// Defaults, then the config file, then the flags that were given.
pub fn resolve<T: DeserializeOwned>(file: Option<&Path>, flags: &impl Serialize) -> Result<T, CliError> {
    let mut merged = match file {
        Some(p) => load_file(p)?,
        None => Value::Object(Default::default()),
    };
    let overlay = serde_json::to_value(flags).map_err(|e| CliError::config(e.to_string()))?;
    if let (Value::Object(base), Value::Object(top)) = (&mut merged, overlay) {
        base.extend(top);
    }
    serde_json::from_value(merged).map_err(|e| CliError::config(format!("invalid configuration: {e}")))
}
