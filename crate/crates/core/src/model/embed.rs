//! Patchify and the `f^0` embedding operator.

use ndarray::{s, Array1, Array2, Array3, Axis};

use crate::config::ModelConfig;
use crate::error::{Error, Result};

use super::TokenMatrix;

#[derive(Debug, Clone, PartialEq)]
pub struct PatchEmbedding {
    /// W_patch, d × D_patch.
    pub projection: Array2<f64>,
    /// z0_[CLS], length d.
    pub class_token: Array1<f64>,
    /// E_pos, d × (N+1); column 0 belongs to the class token.
    pub pos: Array2<f64>,
}

impl PatchEmbedding {
    pub fn zeros(config: &ModelConfig) -> Self {
        let d = config.model_dim;
        PatchEmbedding {
            projection: Array2::zeros((d, config.patch_dim())),
            class_token: Array1::zeros(d),
            pos: Array2::zeros((d, config.num_tokens())),
        }
    }
}

/// Cuts a C×H×W image into non-overlapping patches.
///
/// Column `i` of the result is patch `i` of the grid in row-major order
/// (`i = patch_row * grid_cols + patch_col`). Inside a patch, entries are
/// flattened channel-major, then row, then column:
/// `index = c * P_H * P_W + r * P_W + col`.
pub fn patchify(image: &Array3<f64>, config: &ModelConfig) -> Result<Array2<f64>> {
    let (c, h, w) = image.dim();
    if c != config.channels || h != config.height || w != config.width {
        return Err(Error::config(format!(
            "image is {c}x{h}x{w}, model expects {}x{}x{}",
            config.channels, config.height, config.width
        )));
    }
    if h % config.patch_h != 0 || w % config.patch_w != 0 {
        return Err(Error::config(format!(
            "patch {}x{} does not tile image {h}x{w}",
            config.patch_h, config.patch_w
        )));
    }
    let (ph, pw) = (config.patch_h, config.patch_w);
    let (_, gc) = config.grid();
    let mut out = Array2::zeros((config.patch_dim(), config.num_patches()));
    for (i, mut col) in out.axis_iter_mut(Axis(1)).enumerate() {
        let (pr, pc) = (i / gc, i % gc);
        let block = image.slice(s![.., pr * ph..(pr + 1) * ph, pc * pw..(pc + 1) * pw]);
        for (dst, src) in col.iter_mut().zip(block.iter()) {
            *dst = *src;
        }
    }
    Ok(out)
}

/// Z^1 = [z0_[CLS], W_patch·X] + E_pos.
pub fn embed(patches: &Array2<f64>, emb: &PatchEmbedding) -> Result<TokenMatrix> {
    let (d, dp) = emb.projection.dim();
    let n = patches.ncols();
    if patches.nrows() != dp || emb.class_token.len() != d || emb.pos.dim() != (d, n + 1) {
        return Err(Error::shape(format!(
            "embed: patches {}x{}, projection {d}x{dp}, class token {}, pos {:?}",
            patches.nrows(),
            n,
            emb.class_token.len(),
            emb.pos.dim()
        )));
    }
    let mut z = emb.pos.clone();
    {
        let mut cls = z.column_mut(0);
        cls += &emb.class_token;
    }
    let projected = emb.projection.dot(patches);
    let mut tail = z.slice_mut(s![.., 1..]);
    tail += &projected;
    Ok(z)
}

/// Accumulates embedding gradients given dL/dZ^1.
pub(crate) fn embed_backward(dz: &Array2<f64>, patches: &Array2<f64>, grad: &mut PatchEmbedding) {
    grad.pos += dz;
    grad.class_token += &dz.column(0);
    let dtail = dz.slice(s![.., 1..]);
    grad.projection += &dtail.dot(&patches.t());
}
