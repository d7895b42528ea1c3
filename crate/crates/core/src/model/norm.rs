//! Column-wise LayerNorm over the feature dimension.

use ndarray::{Array1, Array2, Axis, Zip};

/// Added to the variance before the square root.
pub const LN_EPS: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNormParams {
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
}

impl LayerNormParams {
    pub fn identity(d: usize) -> Self {
        LayerNormParams { gamma: Array1::ones(d), beta: Array1::zeros(d) }
    }

    pub fn zeros(d: usize) -> Self {
        LayerNormParams { gamma: Array1::zeros(d), beta: Array1::zeros(d) }
    }
}

/// Standardizes every token (column) over its d entries, then applies γ and β.
pub fn layer_norm(z: &Array2<f64>, gamma: &Array1<f64>, beta: &Array1<f64>) -> Array2<f64> {
    layer_norm_cached(z, gamma, beta).0
}

pub(crate) struct LnCache {
    pub xhat: Array2<f64>,
    pub inv_std: Array1<f64>,
}

pub(crate) fn layer_norm_cached(z: &Array2<f64>, gamma: &Array1<f64>, beta: &Array1<f64>) -> (Array2<f64>, LnCache) {
    let d = z.nrows() as f64;
    let mut xhat = z.clone();
    let mut inv_std = Array1::zeros(z.ncols());
    for (mut col, inv) in xhat.axis_iter_mut(Axis(1)).zip(inv_std.iter_mut()) {
        let mean = col.sum() / d;
        col -= mean;
        let var = col.iter().map(|x| x * x).sum::<f64>() / d;
        *inv = 1.0 / (var + LN_EPS).sqrt();
        col *= *inv;
    }
    let mut y = xhat.clone();
    for mut col in y.axis_iter_mut(Axis(1)) {
        Zip::from(&mut col).and(gamma).and(beta).for_each(|v, &g, &b| *v = *v * g + b);
    }
    (y, LnCache { xhat, inv_std })
}

pub(crate) fn layer_norm_backward(dy: &Array2<f64>, params: &LayerNormParams, cache: &LnCache, grad: &mut LayerNormParams) -> Array2<f64> {
    let d = dy.nrows() as f64;
    grad.beta += &dy.sum_axis(Axis(1));
    grad.gamma += &(dy * &cache.xhat).sum_axis(Axis(1));

    let mut dx = dy.clone();
    for ((mut col, xh), &inv) in dx.axis_iter_mut(Axis(1)).zip(cache.xhat.axis_iter(Axis(1))).zip(cache.inv_std.iter()) {
        col *= &params.gamma;
        let mean_g = col.sum() / d;
        let mean_gx = col.iter().zip(xh.iter()).map(|(g, x)| g * x).sum::<f64>() / d;
        Zip::from(&mut col).and(&xh).for_each(|g, &x| *g = inv * (*g - mean_g - x * mean_gx));
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn constant_column_maps_to_beta() {
        let z = Array2::from_elem((4, 2), 3.0);
        let y = layer_norm(&z, &Array1::ones(4), &Array1::zeros(4));
        assert!(y.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn two_entry_column() {
        let y = layer_norm(&array![[1.0], [-1.0]], &Array1::ones(2), &Array1::zeros(2));
        let expected = 1.0 / (1.0 + LN_EPS).sqrt();
        assert!((y[[0, 0]] - expected).abs() < 1e-15);
        assert!((y[[1, 0]] + expected).abs() < 1e-15);
        assert!((y[[0, 0]] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn zero_gamma_gives_beta() {
        let z = array![[1.0, 5.0], [2.0, -1.0], [7.0, 0.0]];
        let beta = array![0.1, 0.2, 0.3];
        let y = layer_norm(&z, &Array1::zeros(3), &beta);
        for col in y.columns() {
            assert_eq!(col, beta);
        }
    }
}
