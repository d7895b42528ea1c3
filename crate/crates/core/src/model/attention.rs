//! Token mixing: multi-head subspace self-attention (MSSA) and the standard
//! multi-head self-attention (MHSA) used by the ablation variants.
//!
//! Projection matrices are stored d × (K·p) so that head `k` owns columns
//! `k·p..(k+1)·p` and its features are `U_kᵀ Z`. MSSA uses a single such
//! matrix for query, key and value.
//!
//! For head `k` with query/key/value features `Q_k, K_k, V_k` (p × T):
//!
//! ```text
//! A_k   = softmax_rows(Q_kᵀ K_k / √p)        (T × T, row-stochastic)
//! out_k = V_k A_kᵀ                           (p × T)
//! Y     = W_out [out_1; …; out_K] + b_out
//! ```

use ndarray::{s, Array1, Array2, ArrayView2, Axis};

use crate::config::{AttentionVariant, ModelConfig};
use crate::error::{Error, Result};

use super::LayerParams;

#[derive(Debug, Clone, PartialEq)]
pub enum Projections {
    /// U_[K] = [U_1, …, U_K], d × K·p.
    Subspace { u: Array2<f64> },
    /// Separate query/key/value maps, each d × K·p.
    Standard { w_q: Array2<f64>, w_k: Array2<f64>, w_v: Array2<f64> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionBlock {
    pub proj: Projections,
    /// d × K·p.
    pub w_out: Array2<f64>,
    pub b_out: Array1<f64>,
}

impl AttentionBlock {
    pub fn zeros(config: &ModelConfig) -> Self {
        let d = config.model_dim;
        let inner = config.num_heads * config.head_dim;
        let proj = match config.attention {
            AttentionVariant::Mssa => Projections::Subspace { u: Array2::zeros((d, inner)) },
            AttentionVariant::Mhsa => Projections::Standard {
                w_q: Array2::zeros((d, inner)),
                w_k: Array2::zeros((d, inner)),
                w_v: Array2::zeros((d, inner)),
            },
        };
        AttentionBlock { proj, w_out: Array2::zeros((d, inner)), b_out: Array1::zeros(d) }
    }

    pub fn variant(&self) -> AttentionVariant {
        match self.proj {
            Projections::Subspace { .. } => AttentionVariant::Mssa,
            Projections::Standard { .. } => AttentionVariant::Mhsa,
        }
    }

    /// Per-head query and key features of `z` (K·p × T each).
    pub fn query_key(&self, z: &Array2<f64>) -> (Array2<f64>, Array2<f64>) {
        match &self.proj {
            Projections::Subspace { u } => {
                let v = u.t().dot(z);
                (v.clone(), v)
            }
            Projections::Standard { w_q, w_k, .. } => (w_q.t().dot(z), w_k.t().dot(z)),
        }
    }

    /// Features used for affinities and PCA: `U_kᵀ z` for MSSA, the keys for MHSA.
    pub fn key_features(&self, z: &Array2<f64>) -> Array2<f64> {
        match &self.proj {
            Projections::Subspace { u } => u.t().dot(z),
            Projections::Standard { w_k, .. } => w_k.t().dot(z),
        }
    }
}

/// Numerically stable row-wise softmax.
pub fn softmax_rows(s: &Array2<f64>) -> Array2<f64> {
    let mut out = s.clone();
    for mut row in out.axis_iter_mut(Axis(0)) {
        let max = row.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
        row.mapv_inplace(|x| (x - max).exp());
        let sum = row.sum();
        row /= sum;
    }
    out
}

/// MSSA on `z`; returns the block output and the K attention matrices.
pub fn mssa_forward(z: &Array2<f64>, layer: &LayerParams, config: &ModelConfig) -> Result<(Array2<f64>, Vec<Array2<f64>>)> {
    if layer.attn.variant() != AttentionVariant::Mssa {
        return Err(Error::config("mssa_forward called on an MHSA layer"));
    }
    let (y, cache) = attention_cached(z, &layer.attn, config)?;
    Ok((y, cache.attn))
}

/// Standard multi-head self-attention on `z`.
pub fn mhsa_forward(z: &Array2<f64>, layer: &LayerParams, config: &ModelConfig) -> Result<(Array2<f64>, Vec<Array2<f64>>)> {
    if layer.attn.variant() != AttentionVariant::Mhsa {
        return Err(Error::config("mhsa_forward called on an MSSA layer"));
    }
    let (y, cache) = attention_cached(z, &layer.attn, config)?;
    Ok((y, cache.attn))
}

pub(crate) struct AttnCache {
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    pub attn: Vec<Array2<f64>>,
    heads: Array2<f64>,
}

pub(crate) fn attention_cached(z: &Array2<f64>, block: &AttentionBlock, config: &ModelConfig) -> Result<(Array2<f64>, AttnCache)> {
    let inner = config.num_heads * config.head_dim;
    if z.nrows() != config.model_dim || block.w_out.dim() != (config.model_dim, inner) {
        return Err(Error::shape(format!(
            "attention: tokens have {} rows, model_dim {}, w_out {:?}",
            z.nrows(),
            config.model_dim,
            block.w_out.dim()
        )));
    }
    let (q, k, v) = match &block.proj {
        Projections::Subspace { u } => {
            let v = u.t().dot(z);
            (v.clone(), v.clone(), v)
        }
        Projections::Standard { w_q, w_k, w_v } => (w_q.t().dot(z), w_k.t().dot(z), w_v.t().dot(z)),
    };
    let (heads, attn) = multi_head(&q, &k, &v, config.num_heads, config.head_dim, config.attn_scale());
    let mut y = block.w_out.dot(&heads);
    for mut col in y.axis_iter_mut(Axis(1)) {
        col += &block.b_out;
    }
    Ok((y, AttnCache { q, k, v, attn, heads }))
}

fn head_rows(m: &Array2<f64>, h: usize, p: usize) -> ArrayView2<'_, f64> {
    m.slice(s![h * p..(h + 1) * p, ..])
}

fn multi_head(q: &Array2<f64>, k: &Array2<f64>, v: &Array2<f64>, num_heads: usize, p: usize, scale: f64) -> (Array2<f64>, Vec<Array2<f64>>) {
    let mut out = Array2::zeros(v.dim());
    let mut attn = Vec::with_capacity(num_heads);
    for h in 0..num_heads {
        let (qh, kh, vh) = (head_rows(q, h, p), head_rows(k, h, p), head_rows(v, h, p));
        let scores = qh.t().dot(&kh) * scale;
        let a = softmax_rows(&scores);
        out.slice_mut(s![h * p..(h + 1) * p, ..]).assign(&vh.dot(&a.t()));
        attn.push(a);
    }
    (out, attn)
}

/// Backward through the attention block; accumulates parameter gradients into
/// `grad` and returns dL/dz.
pub(crate) fn attention_backward(
    dy: &Array2<f64>,
    z: &Array2<f64>,
    block: &AttentionBlock,
    cache: &AttnCache,
    config: &ModelConfig,
    grad: &mut AttentionBlock,
) -> Array2<f64> {
    let p = config.head_dim;
    let scale = config.attn_scale();
    grad.w_out += &dy.dot(&cache.heads.t());
    grad.b_out += &dy.sum_axis(Axis(1));
    let dheads = block.w_out.t().dot(dy);

    let mut dq = Array2::zeros(cache.q.dim());
    let mut dk = Array2::zeros(cache.k.dim());
    let mut dv = Array2::zeros(cache.v.dim());
    for (h, a) in cache.attn.iter().enumerate() {
        let rows = s![h * p..(h + 1) * p, ..];
        let dout = dheads.slice(rows);
        let (qh, kh, vh) = (head_rows(&cache.q, h, p), head_rows(&cache.k, h, p), head_rows(&cache.v, h, p));
        dv.slice_mut(rows).assign(&dout.dot(a));
        let da = dout.t().dot(&vh);
        // softmax: dS_ij = A_ij (dA_ij - Σ_k A_ik dA_ik)
        let mut ds = a * &da;
        let row_dot = ds.sum_axis(Axis(1));
        for ((mut ds_row, a_row), c) in ds.axis_iter_mut(Axis(0)).zip(a.axis_iter(Axis(0))).zip(row_dot.iter()) {
            ds_row.scaled_add(-*c, &a_row);
        }
        ds *= scale;
        dq.slice_mut(rows).assign(&kh.dot(&ds.t()));
        dk.slice_mut(rows).assign(&qh.dot(&ds));
    }

    match (&block.proj, &mut grad.proj) {
        (Projections::Subspace { u }, Projections::Subspace { u: gu }) => {
            let dshared = dq + &dk + &dv;
            *gu += &z.dot(&dshared.t());
            u.dot(&dshared)
        }
        (Projections::Standard { w_q, w_k, w_v }, Projections::Standard { w_q: gq, w_k: gk, w_v: gv }) => {
            *gq += &z.dot(&dq.t());
            *gk += &z.dot(&dk.t());
            *gv += &z.dot(&dv.t());
            w_q.dot(&dq) + &w_k.dot(&dk) + &w_v.dot(&dv)
        }
        _ => unreachable!("gradient buffer variant differs from parameters"),
    }
}
