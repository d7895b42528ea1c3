//! Class-token attention maps and their top-P segmentation masks.

use ndarray::{s, Array1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{CrateModel, ForwardTrace};

/// Attention of the class token over the N patch tokens for one head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionMap {
    pub values: Vec<f64>,
    /// 0-based head index.
    pub head: usize,
    /// 1-based layer index.
    pub layer: usize,
}

/// Boolean mask over patches (or pixels after upsampling).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegMask {
    pub bits: Vec<bool>,
    pub source: String,
}

impl SegMask {
    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }
}

fn check_layer(model: &CrateModel, trace: &ForwardTrace, layer: usize) -> Result<()> {
    if layer == 0 || layer > model.layers.len() || layer > trace.num_layers() {
        return Err(Error::config(format!("layer {layer} out of range 1..={}", model.layers.len().min(trace.num_layers()))));
    }
    Ok(())
}

/// Softmax over patches i ∈ 1..=N of ⟨K_kᵀ z_i, Q_kᵀ z_cls⟩/√p, where Q = K = U
/// for MSSA. Tokens are the layer's normalized input, the same matrix its
/// attention block consumes; the class token is excluded from the support.
pub fn class_token_attention(model: &CrateModel, trace: &ForwardTrace, layer: usize, head: usize) -> Result<AttentionMap> {
    check_layer(model, trace, layer)?;
    let cfg = &model.config;
    if head >= cfg.num_heads {
        return Err(Error::config(format!("head {head} out of range 0..{}", cfg.num_heads)));
    }
    let zn = &trace.layer(layer)?.normalized;
    let (q, k) = model.layers[layer - 1].attn.query_key(zn);
    let rows = s![head * cfg.head_dim..(head + 1) * cfg.head_dim, ..];
    let (q, k) = (q.slice(rows), k.slice(rows));
    let query = q.column(0);
    let scale = cfg.attn_scale();
    let scores: Array1<f64> = (1..k.ncols()).map(|i| k.column(i).dot(&query) * scale).collect();
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exp = scores.mapv(|v| (v - max).exp());
    let total = exp.sum();
    Ok(AttentionMap { values: exp.iter().map(|v| v / total).collect(), head, layer })
}

/// All heads of one layer.
pub fn layer_attention_maps(model: &CrateModel, trace: &ForwardTrace, layer: usize) -> Result<Vec<AttentionMap>> {
    (0..model.config.num_heads).map(|h| class_token_attention(model, trace, layer, h)).collect()
}

/// Number of entries kept by a top-P mask over `n` entries: ⌈P·n⌉.
pub fn top_count(p: f64, n: usize) -> usize {
    // The small slack keeps P·n that is integral in exact arithmetic from
    // rounding up because of representation error (0.6·10 = 6.000000000000001).
    (((p * n as f64) - 1e-9).ceil().max(0.0) as usize).min(n)
}

/// Marks the ⌈P·N⌉ largest entries; ties go to the lower index.
pub fn attention_to_mask(map: &AttentionMap, p: f64) -> Result<SegMask> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::config(format!("P must lie in (0, 1], got {p}")));
    }
    let n = map.values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| map.values[b].total_cmp(&map.values[a]).then(a.cmp(&b)));
    let mut bits = vec![false; n];
    for &i in order.iter().take(top_count(p, n)) {
        bits[i] = true;
    }
    Ok(SegMask { bits, source: format!("attention layer {} head {} top {:.0}%", map.layer, map.head, p * 100.0) })
}
