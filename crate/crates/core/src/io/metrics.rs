//! JSON metrics reports.
//!
//! ```json
//! {"run": str, "config": obj, "epochs": [{"loss": num, "acc": num}],
//!  "analysis": {"miou": num|null, "per_class": obj,
//!               "ap": {"ap50": num, "ap75": num, "ap": num} | null,
//!               "rates": [{"layer": int, "R": num, "Rc": num, "l0": int, "l1": num}],
//!               "extra": obj}}
//! ```
//!
//! Key order is fixed and no timestamps are recorded, so identical runs give
//! byte-identical files. `extra` holds run-specific scalars and is omitted
//! when empty.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::analysis::ApReport;
use crate::error::Result;
use crate::objective::RateReport;
use crate::train::EpochStats;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub run: String,
    pub config: serde_json::Value,
    pub epochs: Vec<EpochStats>,
    pub analysis: AnalysisMetrics,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AnalysisMetrics {
    pub miou: Option<f64>,
    pub per_class: BTreeMap<String, f64>,
    pub ap: Option<ApSummary>,
    pub rates: Vec<LayerRate>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub extra: BTreeMap<String, serde_json::Value>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ApSummary {
    pub ap50: f64,
    pub ap75: f64,
    pub ap: f64,
}

impl From<&ApReport> for ApSummary {
    fn from(r: &ApReport) -> Self {
        ApSummary { ap50: r.ap50, ap75: r.ap75, ap: r.ap }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayerRate {
    /// 1-based.
    pub layer: usize,
    #[serde(rename = "R")]
    pub r: f64,
    #[serde(rename = "Rc")]
    pub rc: f64,
    pub l0: u64,
    pub l1: f64,
}

impl LayerRate {
    pub fn new(layer: usize, r: &RateReport) -> Self {
        LayerRate { layer, r: r.r, rc: r.rc, l0: r.l0, l1: r.l1 }
    }
}

impl MetricsReport {
    pub fn new(run: impl Into<String>, config: serde_json::Value) -> Self {
        MetricsReport { run: run.into(), config, epochs: Vec::new(), analysis: AnalysisMetrics::default() }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_slice(&fs::read(path)?)?)
    }
}
