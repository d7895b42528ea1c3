//! PCA visualization of patch features with first-component foreground
//! selection.
//!
//! Token features from all images are stacked as the columns of `Ẑ` and
//! rescaled so the RMS token norm is 1. `u0` is the top eigenvector of the
//! uncentered second-moment matrix `ẐẐᵀ`, oriented so the mean projection is
//! nonnegative; tokens with `⟨u0, ẑ⟩ ≥ λ` are kept. The top three
//! eigenvectors of the kept tokens' second-moment matrix give the RGB
//! channels, min-max normalized over the kept tokens. Dropped tokens are black.

use ndarray::{Array1, Array2, Array3, Axis};

use crate::error::{Error, Result};
use crate::linalg::SymEigen;

/// Default selection threshold on the first component.
pub const PCA_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone)]
pub struct PcaVisualization {
    /// Unit-norm first direction.
    pub u0: Array1<f64>,
    /// u1, u2, u3 (fewer if the feature dimension is below 3).
    pub components: Vec<Array1<f64>>,
    pub eigenvalues: Vec<f64>,
    /// Per image, one flag per token.
    pub selected: Vec<Vec<bool>>,
    /// Per image, 3 × rows × cols in [0, 1].
    pub rgb: Vec<Array3<f64>>,
    /// Factor applied to the raw features.
    pub scale: f64,
}

/// Top `k` eigenpairs of the uncentered second-moment matrix `X Xᵀ` of the
/// columns of `x`, in descending order. Each eigenvector is signed so its
/// largest-magnitude entry is positive (lowest index on ties).
pub fn principal_directions(x: &Array2<f64>, k: usize) -> Result<(Vec<f64>, Vec<Array1<f64>>)> {
    let gram = x.dot(&x.t());
    let eig = SymEigen::new(&gram)?;
    let (values, mut vectors) = eig.top(k.min(gram.nrows()));
    for v in &mut vectors {
        let mut pivot = 0;
        for (i, x) in v.iter().enumerate() {
            if x.abs() > v[pivot].abs() {
                pivot = i;
            }
        }
        if v[pivot] < 0.0 {
            v.mapv_inplace(|x| -x);
        }
    }
    Ok((values, vectors))
}

/// `features[j]` is F × N for image j; `grid` is the patch grid (rows, cols).
pub fn pca_patch_visualization(features: &[Array2<f64>], grid: (usize, usize), threshold: f64) -> Result<PcaVisualization> {
    let first = features.first().ok_or_else(|| Error::config("PCA needs at least one image"))?;
    let (dim, n) = first.dim();
    if n != grid.0 * grid.1 {
        return Err(Error::shape(format!("{n} tokens do not fill a {}×{} grid", grid.0, grid.1)));
    }
    if features.iter().any(|f| f.dim() != (dim, n)) {
        return Err(Error::shape("feature matrices differ in shape"));
    }
    let views: Vec<_> = features.iter().map(|f| f.view()).collect();
    let stacked = ndarray::concatenate(Axis(1), &views).map_err(|e| Error::shape(e.to_string()))?;
    let total = stacked.ncols() as f64;
    let sq = stacked.iter().map(|v| v * v).sum::<f64>();
    if sq == 0.0 {
        return Err(Error::Numerical("foreground selection empty: all features are zero".into()));
    }
    let scale = (total / sq).sqrt();
    let z = stacked * scale;

    let (_, mut top) = principal_directions(&z, 1)?;
    let mut u0 = top.remove(0);
    let proj = u0.dot(&z);
    if proj.mean().unwrap_or(0.0) < 0.0 {
        u0.mapv_inplace(|v| -v);
    }
    let proj = u0.dot(&z);
    let keep: Vec<bool> = proj.iter().map(|&v| v >= threshold).collect();
    let kept: Vec<usize> = (0..keep.len()).filter(|&i| keep[i]).collect();
    if kept.len() < 3 {
        return Err(Error::Numerical(format!("foreground selection empty: {} tokens pass threshold {threshold}", kept.len())));
    }
    let zs = z.select(Axis(1), &kept);
    let (eigenvalues, components) = principal_directions(&zs, 3)?;

    let mut channels: Vec<Array1<f64>> = components.iter().map(|u| u.dot(&z)).collect();
    for ch in &mut channels {
        let (lo, hi) = kept.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &i| (lo.min(ch[i]), hi.max(ch[i])));
        let span = hi - lo;
        ch.mapv_inplace(|v| if span > 0.0 { (v - lo) / span } else { 0.5 });
    }
    let mut rgb = Vec::with_capacity(features.len());
    let mut selected = Vec::with_capacity(features.len());
    for j in 0..features.len() {
        let mut img = Array3::zeros((3, grid.0, grid.1));
        for i in 0..n {
            let t = j * n + i;
            if keep[t] {
                for (c, ch) in channels.iter().enumerate() {
                    img[[c, i / grid.1, i % grid.1]] = ch[t];
                }
            }
        }
        rgb.push(img);
        selected.push(keep[j * n..(j + 1) * n].to_vec());
    }
    Ok(PcaVisualization { u0, components, eigenvalues, selected, rgb, scale })
}
