//! Dataset-level analysis over samples with ground-truth patch masks.

use ndarray::{s, Array2};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use super::ap::{average_precision, ApReport, ScoredMask};
use super::attention::{attention_to_mask, layer_attention_maps, top_count, SegMask};
use super::miou::miou;
use super::ncut::{affinity_matrix, maskcut, AffinityMatrix, MaskCutConfig, MaskCutResult};
use crate::error::{Error, Result};
use crate::model::{CrateModel, ForwardTrace};
use crate::train::{normalize_image, Sample, SHAPE_FAMILIES};

/// Per-patch features of layer `layer` (1-based): `U_kᵀ z` stacked over heads
/// for MSSA, key features for MHSA, computed from the normalized layer input.
/// Returns K·p × N (class token dropped).
pub fn token_features(model: &CrateModel, trace: &ForwardTrace, layer: usize) -> Result<Array2<f64>> {
    if layer == 0 || layer > model.layers.len() {
        return Err(Error::config(format!("layer {layer} out of range 1..={}", model.layers.len())));
    }
    let zn = &trace.layer(layer)?.normalized;
    Ok(model.layers[layer - 1].attn.key_features(zn).slice(s![.., 1..]).to_owned())
}

pub fn affinity_from_trace(model: &CrateModel, trace: &ForwardTrace, layer: usize, tau: f64, normalize: bool) -> Result<AffinityMatrix> {
    Ok(affinity_matrix(&token_features(model, trace, layer)?, tau, normalize))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegEval {
    /// Mean over images of the per-image best-head IoU.
    pub miou: f64,
    /// Mean per shape family.
    pub per_class: BTreeMap<String, f64>,
    /// How often each head was the best match.
    pub best_head_counts: Vec<usize>,
    pub images: usize,
}

fn class_name(label: usize) -> String {
    SHAPE_FAMILIES.get(label).map(|s| s.to_string()).unwrap_or_else(|| format!("class{label}"))
}

fn aggregate(scores: &[(usize, f64, usize)], num_heads: usize) -> SegEval {
    let mut sums: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    let mut counts = vec![0; num_heads];
    for &(label, v, head) in scores {
        let e = sums.entry(class_name(label)).or_default();
        e.0 += v;
        e.1 += 1;
        if head < num_heads {
            counts[head] += 1;
        }
    }
    let n = scores.len().max(1) as f64;
    SegEval {
        miou: scores.iter().map(|s| s.1).sum::<f64>() / n,
        per_class: sums.into_iter().map(|(k, (s, c))| (k, s / c as f64)).collect(),
        best_head_counts: counts,
        images: scores.len(),
    }
}

/// Per-head attention masks of every sample at `layer`.
pub fn attention_masks(model: &CrateModel, sample: &Sample, layer: usize, p: f64) -> Result<Vec<SegMask>> {
    let out = model.forward_image(&normalize_image(&sample.image), true)?;
    let trace = out.trace.expect("trace requested");
    layer_attention_maps(model, &trace, layer)?.iter().map(|m| attention_to_mask(m, p)).collect()
}

/// Best-head attention mIoU against `patch_gt`, the image's single
/// foreground class. Images with an empty ground truth are skipped.
pub fn segmentation_miou(model: &CrateModel, samples: &[Sample], layer: usize, p: f64) -> Result<SegEval> {
    let scores: Vec<Option<(usize, f64, usize)>> = samples
        .par_iter()
        .map(|s| {
            let masks = attention_masks(model, s, layer, p)?;
            let r = miou(&masks, &[(s.label, s.patch_gt.clone())]);
            Ok(r.miou.map(|v| (s.label, v, r.best_head[&s.label])))
        })
        .collect::<Result<_>>()?;
    let scores: Vec<_> = scores.into_iter().flatten().collect();
    Ok(aggregate(&scores, model.config.num_heads))
}

/// The same protocol with `num_heads` uniformly random masks of ⌈P·N⌉
/// patches per image.
pub fn random_mask_miou(samples: &[Sample], num_heads: usize, p: f64, seed: u64) -> SegEval {
    let scores: Vec<(usize, f64, usize)> = samples
        .iter()
        .enumerate()
        .filter_map(|(i, s)| {
            let n = s.patch_gt.len();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let masks: Vec<SegMask> = (0..num_heads)
                .map(|_| {
                    let mut bits = vec![false; n];
                    for j in sample(&mut rng, n, top_count(p, n)) {
                        bits[j] = true;
                    }
                    SegMask { bits, source: "random".into() }
                })
                .collect();
            let r = miou(&masks, &[(s.label, s.patch_gt.clone())]);
            r.miou.map(|v| (s.label, v, r.best_head[&s.label]))
        })
        .collect();
    aggregate(&scores, num_heads)
}

/// MaskCut on one sample's layer features.
pub fn sample_maskcut(model: &CrateModel, sample: &Sample, layer: usize, cfg: &MaskCutConfig, normalize: bool) -> Result<MaskCutResult> {
    let out = model.forward_image(&normalize_image(&sample.image), true)?;
    let trace = out.trace.expect("trace requested");
    let aff = affinity_from_trace(model, &trace, layer, cfg.tau, normalize)?;
    maskcut(&aff.m, model.config.grid(), cfg)
}

/// Simplified AP of MaskCut masks against each sample's foreground.
pub fn maskcut_ap(model: &CrateModel, samples: &[Sample], layer: usize, cfg: &MaskCutConfig, normalize: bool) -> Result<ApReport> {
    let preds: Vec<Vec<ScoredMask>> = samples
        .par_iter()
        .map(|s| {
            let r = sample_maskcut(model, s, layer, cfg, normalize)?;
            Ok(r.masks.into_iter().map(|m| ScoredMask { bits: m.bits, score: m.score }).collect())
        })
        .collect::<Result<_>>()?;
    let gts: Vec<Vec<Vec<bool>>> = samples.iter().map(|s| if s.patch_gt.iter().any(|&b| b) { vec![s.patch_gt.clone()] } else { vec![] }).collect();
    Ok(average_precision(&preds, &gts))
}
