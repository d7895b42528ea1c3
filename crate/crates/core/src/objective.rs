//! Sparse rate reduction: coding rates, their gradients and the exact
//! compression step that MSSA approximates.
//!
//! For tokens Z (d × n) and subspaces U_[K] (each d × p):
//!
//! ```text
//! R(Z)        = ½ logdet(I_d + d/(n ε²) Z Zᵀ)
//! Rᶜ(Z | U)   = Σ_k ½ logdet(I_p + p/(n ε²) (U_kᵀ Z)(U_kᵀ Z)ᵀ)
//! objective   = R − λ‖Z‖₀ − Rᶜ
//! ```

use ndarray::{s, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{inverse_spd, logdet_spd};
use crate::model::{softmax_rows, CrateModel, ForwardTrace, Projections};

/// Entries with magnitude above this count toward ‖Z‖₀.
pub const L0_THRESHOLD: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CodingRateParams {
    pub epsilon: f64,
    pub lambda: f64,
}

impl Default for CodingRateParams {
    fn default() -> Self {
        CodingRateParams { epsilon: 1.0, lambda: 0.1 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateReport {
    #[serde(rename = "R")]
    pub r: f64,
    #[serde(rename = "Rc")]
    pub rc: f64,
    pub l0: u64,
    pub l1: f64,
    pub objective: f64,
}

/// ½ logdet(I + α·G) for the Gram-side or covariance-side matrix, whichever is smaller.
fn half_logdet_shifted(z: &Array2<f64>, alpha: f64) -> f64 {
    let (d, n) = z.dim();
    let mut m = if n < d { z.t().dot(z) } else { z.dot(&z.t()) };
    m *= alpha;
    for i in 0..m.nrows() {
        m[[i, i]] += 1.0;
    }
    0.5 * logdet_spd(&m).expect("identity plus a Gram matrix is positive definite")
}

/// R(Z) = ½ logdet(I_d + d/(nε²) Z Zᵀ).
pub fn coding_rate(z: &Array2<f64>, epsilon: f64) -> f64 {
    let (d, n) = z.dim();
    if n == 0 || d == 0 {
        return 0.0;
    }
    half_logdet_shifted(z, d as f64 / (n as f64 * epsilon * epsilon))
}

fn check_subspaces(z: &Array2<f64>, us: &[Array2<f64>]) -> Result<usize> {
    let p = us.first().map(|u| u.ncols()).unwrap_or(0);
    for u in us {
        if u.nrows() != z.nrows() || u.ncols() != p {
            return Err(Error::shape(format!("subspace is {:?}, tokens have {} rows and p = {p}", u.dim(), z.nrows())));
        }
    }
    Ok(p)
}

/// Rᶜ(Z | U_[K]) = Σ_k ½ logdet(I_p + p/(nε²) (U_kᵀZ)(U_kᵀZ)ᵀ).
pub fn coding_rate_subspaces(z: &Array2<f64>, us: &[Array2<f64>], epsilon: f64) -> Result<f64> {
    let p = check_subspaces(z, us)?;
    let n = z.ncols();
    if n == 0 {
        return Ok(0.0);
    }
    let alpha = p as f64 / (n as f64 * epsilon * epsilon);
    Ok(us.iter().map(|u| half_logdet_shifted(&u.t().dot(z), alpha)).sum())
}

/// ∇_Z Rᶜ = Σ_k α U_k W_k (I_n + α W_kᵀW_k)⁻¹ with W_k = U_kᵀZ and α = p/(nε²).
pub fn grad_coding_rate_subspaces(z: &Array2<f64>, us: &[Array2<f64>], epsilon: f64) -> Result<Array2<f64>> {
    let p = check_subspaces(z, us)?;
    let n = z.ncols();
    let alpha = p as f64 / (n as f64 * epsilon * epsilon);
    let mut grad = Array2::zeros(z.dim());
    for u in us {
        let w = u.t().dot(z);
        let mut m = w.t().dot(&w) * alpha;
        for i in 0..n {
            m[[i, i]] += 1.0;
        }
        let inv = inverse_spd(&m)?;
        grad.scaled_add(alpha, &u.dot(&w.dot(&inv)));
    }
    Ok(grad)
}

/// Z − κ∇Rᶜ(Z | U_[K]): one exact gradient step on the compression term.
pub fn exact_compression_step(z: &Array2<f64>, us: &[Array2<f64>], epsilon: f64, kappa: f64) -> Result<Array2<f64>> {
    if !(kappa > 0.0) {
        return Err(Error::config("compression step size must be positive"));
    }
    let g = grad_coding_rate_subspaces(z, us, epsilon)?;
    Ok(z - &(g * kappa))
}

/// The idealized multi-head subspace self-attention with its rate prefactor
/// and no output projection:
/// `p/(nε²) Σ_k U_k (U_kᵀZ) softmax((U_kᵀZ)ᵀ(U_kᵀZ))`.
///
/// The softmax normalizes each column of the (symmetric) similarity matrix,
/// so column `i` of the result mixes tokens with the weights of row `i` of
/// the usual row-stochastic attention.
pub fn mssa_ideal(z: &Array2<f64>, us: &[Array2<f64>], epsilon: f64) -> Result<Array2<f64>> {
    let p = check_subspaces(z, us)?;
    let n = z.ncols();
    let alpha = p as f64 / (n as f64 * epsilon * epsilon);
    let mut out = Array2::zeros(z.dim());
    for u in us {
        let w = u.t().dot(z);
        let a = softmax_rows(&w.t().dot(&w));
        out.scaled_add(alpha, &u.dot(&w.dot(&a.t())));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MssaDiagnostic {
    /// cos∠(∇Rᶜ, p/(nε²)(Z − MSSA(Z))); 0 when either side vanishes.
    pub cosine: f64,
    /// ‖G − Ĝ‖ / max(‖G‖, ‖Ĝ‖), in [0, 2].
    pub rel_norm_gap: f64,
    /// One of the two vectors is zero, so the cosine carries no information.
    pub degenerate: bool,
    /// Some U_k does not have orthonormal columns (tolerance 1e-6).
    pub non_orthonormal: bool,
}

fn is_orthonormal(u: &Array2<f64>) -> bool {
    let g = u.t().dot(u);
    g.indexed_iter().all(|((i, j), v)| (v - if i == j { 1.0 } else { 0.0 }).abs() < 1e-6)
}

/// Compares the analytic gradient of Rᶜ with its softmax-attention
/// approximation `Ĝ = p/(nε²)(Z − MSSA(Z))`.
pub fn mssa_gradient_diagnostic(z: &Array2<f64>, us: &[Array2<f64>], epsilon: f64) -> Result<MssaDiagnostic> {
    let p = check_subspaces(z, us)?;
    let n = z.ncols();
    let alpha = p as f64 / (n as f64 * epsilon * epsilon);
    let g = grad_coding_rate_subspaces(z, us, epsilon)?;
    let ghat = (z - &mssa_ideal(z, us, epsilon)?) * alpha;
    let ng = g.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nh = ghat.iter().map(|x| x * x).sum::<f64>().sqrt();
    let degenerate = ng == 0.0 || nh == 0.0;
    let cosine = if degenerate { 0.0 } else { (&g * &ghat).sum() / (ng * nh) };
    let denom = ng.max(nh);
    let rel_norm_gap = if denom == 0.0 { 0.0 } else { (&g - &ghat).iter().map(|x| x * x).sum::<f64>().sqrt() / denom };
    Ok(MssaDiagnostic {
        cosine: cosine.clamp(-1.0, 1.0),
        rel_norm_gap,
        degenerate,
        non_orthonormal: !us.iter().all(is_orthonormal),
    })
}

/// R, Rᶜ, ‖Z‖₀, ‖Z‖₁ and the sparse rate reduction objective R − λ‖Z‖₀ − Rᶜ.
pub fn rate_report(z: &Array2<f64>, us: &[Array2<f64>], params: CodingRateParams) -> Result<RateReport> {
    let r = coding_rate(z, params.epsilon);
    let rc = coding_rate_subspaces(z, us, params.epsilon)?;
    let l0 = z.iter().filter(|v| v.abs() > L0_THRESHOLD).count() as u64;
    let l1 = z.iter().map(|v| v.abs()).sum();
    Ok(RateReport { r, rc, l0, l1, objective: r - params.lambda * l0 as f64 - rc })
}

/// Splits a d × K·p projection into its K blocks of p columns.
pub fn split_heads(u: &Array2<f64>, num_heads: usize) -> Vec<Array2<f64>> {
    let p = u.ncols() / num_heads;
    (0..num_heads).map(|k| u.slice(s![.., k * p..(k + 1) * p]).to_owned()).collect()
}

/// Per-head subspaces of layer `l` (0-based): U_k for MSSA, the key maps for MHSA.
pub fn layer_subspaces(model: &CrateModel, l: usize) -> Vec<Array2<f64>> {
    let u = match &model.layers[l].attn.proj {
        Projections::Subspace { u } => u,
        Projections::Standard { w_k, .. } => w_k,
    };
    split_heads(u, model.config.num_heads)
}

/// Rate report of each layer output Z^{ℓ+1} against that layer's subspaces U^ℓ,
/// for ℓ = 1..L.
pub fn layer_rates(model: &CrateModel, trace: &ForwardTrace, params: CodingRateParams) -> Result<Vec<RateReport>> {
    (0..trace.num_layers())
        .map(|l| rate_report(&trace.inputs[l + 1], &layer_subspaces(model, l), params))
        .collect()
}

/// Average of per-image reports, field by field.
pub fn mean_reports(reports: &[RateReport]) -> Option<RateReport> {
    if reports.is_empty() {
        return None;
    }
    let n = reports.len() as f64;
    let sum = |f: fn(&RateReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
    Some(RateReport {
        r: sum(|r| r.r),
        rc: sum(|r| r.rc),
        l0: (reports.iter().map(|r| r.l0).sum::<u64>() as f64 / n).round() as u64,
        l1: sum(|r| r.l1),
        objective: sum(|r| r.objective),
    })
}
