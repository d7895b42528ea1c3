//! GELU perceptron used by the MLP ablation variants.

use ndarray::{Array1, Array2, Axis, Zip};
use std::f64::consts::{FRAC_1_SQRT_2, PI};

#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    /// hidden × d.
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    /// d × hidden.
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
}

impl MlpParams {
    pub fn zeros(d: usize, hidden: usize) -> Self {
        MlpParams {
            w1: Array2::zeros((hidden, d)),
            b1: Array1::zeros(hidden),
            w2: Array2::zeros((d, hidden)),
            b2: Array1::zeros(d),
        }
    }
}

/// Exact (erf) GELU.
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x * FRAC_1_SQRT_2))
}

pub fn gelu_grad(x: f64) -> f64 {
    let cdf = 0.5 * (1.0 + libm::erf(x * FRAC_1_SQRT_2));
    let pdf = (-0.5 * x * x).exp() / (2.0 * PI).sqrt();
    cdf + x * pdf
}

fn affine(w: &Array2<f64>, b: &Array1<f64>, z: &Array2<f64>) -> Array2<f64> {
    let mut out = w.dot(z);
    for mut col in out.axis_iter_mut(Axis(1)) {
        col += b;
    }
    out
}

/// Z + W2·GELU(W1·Z + b1) + b2, column-wise.
pub fn mlp_forward(z: &Array2<f64>, params: &MlpParams) -> Array2<f64> {
    mlp_cached(z, params).0
}

pub(crate) fn mlp_cached(z: &Array2<f64>, params: &MlpParams) -> (Array2<f64>, Array2<f64>) {
    let hidden_pre = affine(&params.w1, &params.b1, z);
    let act = hidden_pre.mapv(gelu);
    let out = affine(&params.w2, &params.b2, &act) + z;
    (out, hidden_pre)
}

pub(crate) fn mlp_backward(dy: &Array2<f64>, z: &Array2<f64>, params: &MlpParams, hidden_pre: &Array2<f64>, grad: &mut MlpParams) -> Array2<f64> {
    let act = hidden_pre.mapv(gelu);
    grad.w2 += &dy.dot(&act.t());
    grad.b2 += &dy.sum_axis(Axis(1));
    let mut dh = params.w2.t().dot(dy);
    Zip::from(&mut dh).and(hidden_pre).for_each(|g, &h| *g *= gelu_grad(h));
    grad.w1 += &dh.dot(&z.t());
    grad.b1 += &dh.sum_axis(Axis(1));
    dy + &params.w1.t().dot(&dh)
}
