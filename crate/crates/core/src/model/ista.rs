//! The ISTA sparsification block.
//!
//! One proximal-gradient step on the nonnegative LASSO
//! `min_{A ≥ 0} ½‖Z − D A‖² + λ‖A‖₁` started at `A = Z`:
//!
//! ```text
//! ISTA(Z | D) = ReLU(Z + η Dᵀ(Z − D Z) − η λ)
//! ```
//!
//! The skip connection lives inside the step; no outer residual is added.

use ndarray::{Array2, Zip};

/// ReLU(Z + η·Dᵀ(Z − D·Z) − η·λ), elementwise.
pub fn ista_forward(z: &Array2<f64>, dict: &Array2<f64>, eta: f64, lambda: f64) -> Array2<f64> {
    let mut pre = ista_preactivation(z, dict, eta, lambda);
    pre.mapv_inplace(|x| x.max(0.0));
    pre
}

pub(crate) fn ista_preactivation(z: &Array2<f64>, dict: &Array2<f64>, eta: f64, lambda: f64) -> Array2<f64> {
    let residual = z - &dict.dot(z);
    let mut pre = dict.t().dot(&residual);
    Zip::from(&mut pre).and(z).for_each(|p, &zv| *p = zv + eta * *p - eta * lambda);
    pre
}

/// Returns dL/dZ and accumulates dL/dD. The ReLU subgradient at 0 is 0.
pub(crate) fn ista_backward(
    dy: &Array2<f64>,
    z: &Array2<f64>,
    dict: &Array2<f64>,
    pre: &Array2<f64>,
    eta: f64,
    grad_dict: &mut Array2<f64>,
) -> Array2<f64> {
    let mut dpre = dy.clone();
    Zip::from(&mut dpre).and(pre).for_each(|g, &p| {
        if p <= 0.0 {
            *g = 0.0;
        }
    });
    let d_dpre = dict.dot(&dpre);
    let residual = z - &dict.dot(z);
    // dD = η [ (Z − DZ) dPᵀ − (D dP) Zᵀ ]
    grad_dict.scaled_add(eta, &residual.dot(&dpre.t()));
    grad_dict.scaled_add(-eta, &d_dpre.dot(&z.t()));
    // dZ = (I + ηD − ηDᵀD) dP
    let mut dz = dpre;
    dz.scaled_add(eta, &d_dpre);
    dz.scaled_add(-eta, &dict.t().dot(&d_dpre));
    dz
}
