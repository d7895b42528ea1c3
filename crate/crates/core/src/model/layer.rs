//! One CRATE layer: compression then sparsification.
//!
//! ```text
//! Zn    = LN1(Z)
//! Zhalf = Zn + Attn(Zn)        residual taken from the normalized input
//! Zn2   = LN2(Zhalf)
//! Zout  = ISTA(Zn2)  or  MLP(Zn2)
//! ```

use ndarray::Array2;

use crate::config::{MlpVariant, ModelConfig};
use crate::error::Result;

use super::attention::{attention_backward, attention_cached, AttentionBlock, AttnCache};
use super::ista::{ista_backward, ista_preactivation};
use super::mlp::{mlp_backward, mlp_cached, MlpParams};
use super::norm::{layer_norm_backward, layer_norm_cached, LayerNormParams, LnCache};

#[derive(Debug, Clone, PartialEq)]
pub enum FeedForward {
    /// Sparsifying dictionary D, d × d.
    Ista { dict: Array2<f64> },
    Mlp(MlpParams),
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub ln1: LayerNormParams,
    pub attn: AttentionBlock,
    pub ln2: LayerNormParams,
    pub ff: FeedForward,
}

impl LayerParams {
    pub fn zeros(config: &ModelConfig) -> Self {
        let d = config.model_dim;
        let ff = match config.mlp {
            MlpVariant::Ista => FeedForward::Ista { dict: Array2::zeros((d, d)) },
            MlpVariant::Mlp => FeedForward::Mlp(MlpParams::zeros(d, config.mlp_hidden)),
        };
        LayerParams {
            ln1: LayerNormParams::zeros(d),
            attn: AttentionBlock::zeros(config),
            ln2: LayerNormParams::zeros(d),
            ff,
        }
    }
}

/// Intermediate representations of one layer, kept for analysis.
#[derive(Debug, Clone)]
pub struct LayerTrace {
    /// LN1(Z^ℓ), the tokens the attention block actually sees.
    pub normalized: Array2<f64>,
    /// Z^{ℓ+1/2}.
    pub halfway: Array2<f64>,
    /// One row-stochastic (N+1)×(N+1) matrix per head.
    pub attention: Vec<Array2<f64>>,
}

pub fn crate_layer_forward(z: &Array2<f64>, layer: &LayerParams, config: &ModelConfig) -> Result<(Array2<f64>, LayerTrace)> {
    let (out, cache) = layer_cached(z, layer, config)?;
    Ok((
        out,
        LayerTrace { normalized: cache.zn, halfway: cache.zhalf, attention: cache.attn.attn },
    ))
}

pub(crate) enum FfCache {
    Ista { pre: Array2<f64> },
    Mlp { hidden_pre: Array2<f64> },
}

pub(crate) struct LayerCache {
    ln1: LnCache,
    pub zn: Array2<f64>,
    pub attn: AttnCache,
    pub zhalf: Array2<f64>,
    ln2: LnCache,
    zn2: Array2<f64>,
    ff: FfCache,
}

pub(crate) fn layer_cached(z: &Array2<f64>, layer: &LayerParams, config: &ModelConfig) -> Result<(Array2<f64>, LayerCache)> {
    let (zn, ln1) = layer_norm_cached(z, &layer.ln1.gamma, &layer.ln1.beta);
    let (attn_out, attn) = attention_cached(&zn, &layer.attn, config)?;
    let zhalf = &zn + &attn_out;
    let (zn2, ln2) = layer_norm_cached(&zhalf, &layer.ln2.gamma, &layer.ln2.beta);
    let (out, ff) = match &layer.ff {
        FeedForward::Ista { dict } => {
            let pre = ista_preactivation(&zn2, dict, config.ista_step, config.lambda);
            (pre.mapv(|x| x.max(0.0)), FfCache::Ista { pre })
        }
        FeedForward::Mlp(p) => {
            let (out, hidden_pre) = mlp_cached(&zn2, p);
            (out, FfCache::Mlp { hidden_pre })
        }
    };
    Ok((out, LayerCache { ln1, zn, attn, zhalf, ln2, zn2, ff }))
}

pub(crate) fn layer_backward(
    dout: &Array2<f64>,
    layer: &LayerParams,
    cache: &LayerCache,
    config: &ModelConfig,
    grad: &mut LayerParams,
) -> Array2<f64> {
    let dzn2 = match (&layer.ff, &cache.ff, &mut grad.ff) {
        (FeedForward::Ista { dict }, FfCache::Ista { pre }, FeedForward::Ista { dict: gd }) => {
            ista_backward(dout, &cache.zn2, dict, pre, config.ista_step, gd)
        }
        (FeedForward::Mlp(p), FfCache::Mlp { hidden_pre }, FeedForward::Mlp(gp)) => mlp_backward(dout, &cache.zn2, p, hidden_pre, gp),
        _ => unreachable!("gradient buffer variant differs from parameters"),
    };
    let dzhalf = layer_norm_backward(&dzn2, &layer.ln2, &cache.ln2, &mut grad.ln2);
    let mut dzn = attention_backward(&dzhalf, &cache.zn, &layer.attn, &cache.attn, config, &mut grad.attn);
    dzn += &dzhalf;
    layer_norm_backward(&dzn, &layer.ln1, &cache.ln1, &mut grad.ln1)
}
