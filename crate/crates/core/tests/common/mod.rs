//! Independent loop-level oracles shared by the integration tests.
#![allow(dead_code)]

use crate_core::model::{FeedForward, LayerParams, Projections};
use crate_core::ModelConfig;
use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.sample::<f64, _>(StandardNormal))
}

/// d × p with orthonormal columns (modified Gram-Schmidt on a Gaussian draw).
pub fn orthonormal(d: usize, p: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let mut q = gaussian(d, p, rng);
    for j in 0..p {
        for k in 0..j {
            let dot: f64 = (0..d).map(|i| q[[i, j]] * q[[i, k]]).sum();
            for i in 0..d {
                q[[i, j]] -= dot * q[[i, k]];
            }
        }
        let norm = (0..d).map(|i| q[[i, j]] * q[[i, j]]).sum::<f64>().sqrt();
        for i in 0..d {
            q[[i, j]] /= norm;
        }
    }
    q
}

pub fn max_abs_diff(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    assert_eq!(a.dim(), b.dim());
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn layer_norm_loop(z: &Array2<f64>, gamma: &Array1<f64>, beta: &Array1<f64>) -> Array2<f64> {
    let (d, n) = z.dim();
    let mut out = Array2::zeros((d, n));
    for j in 0..n {
        let mut mean = 0.0;
        for i in 0..d {
            mean += z[[i, j]];
        }
        mean /= d as f64;
        let mut var = 0.0;
        for i in 0..d {
            var += (z[[i, j]] - mean).powi(2);
        }
        var /= d as f64;
        let s = (var + 1e-6).sqrt();
        for i in 0..d {
            out[[i, j]] = (z[[i, j]] - mean) / s * gamma[i] + beta[i];
        }
    }
    out
}

/// Head-by-head attention with explicit sums. Returns the block output and
/// the attention matrices.
pub fn attention_loop(z: &Array2<f64>, layer: &LayerParams, cfg: &ModelConfig) -> (Array2<f64>, Vec<Array2<f64>>) {
    let (d, t) = z.dim();
    let p = cfg.head_dim;
    let (wq, wk, wv) = match &layer.attn.proj {
        Projections::Subspace { u } => (u, u, u),
        Projections::Standard { w_q, w_k, w_v } => (w_q, w_k, w_v),
    };
    let feat = |w: &Array2<f64>, k: usize, r: usize, i: usize| -> f64 { (0..d).map(|a| w[[a, k * p + r]] * z[[a, i]]).sum() };
    let mut heads = Array2::<f64>::zeros((cfg.num_heads * p, t));
    let mut attns = Vec::new();
    for k in 0..cfg.num_heads {
        let mut a = Array2::<f64>::zeros((t, t));
        for i in 0..t {
            let mut scores = vec![0.0; t];
            for (j, s) in scores.iter_mut().enumerate() {
                *s = (0..p).map(|r| feat(wq, k, r, i) * feat(wk, k, r, j)).sum::<f64>() / (p as f64).sqrt();
            }
            let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let total: f64 = scores.iter().map(|s| (s - m).exp()).sum();
            for j in 0..t {
                a[[i, j]] = (scores[j] - m).exp() / total;
            }
        }
        for r in 0..p {
            for i in 0..t {
                heads[[k * p + r, i]] = (0..t).map(|j| a[[i, j]] * feat(wv, k, r, j)).sum();
            }
        }
        attns.push(a);
    }
    let mut y = Array2::zeros((d, t));
    for o in 0..d {
        for i in 0..t {
            y[[o, i]] = layer.attn.b_out[o] + (0..heads.nrows()).map(|h| layer.attn.w_out[[o, h]] * heads[[h, i]]).sum::<f64>();
        }
    }
    (y, attns)
}

pub fn ista_loop(z: &Array2<f64>, dict: &Array2<f64>, eta: f64, lambda: f64) -> Array2<f64> {
    let (d, n) = z.dim();
    let mut out = Array2::zeros((d, n));
    for j in 0..n {
        // Gradient of ½‖z − D a‖² at a = z is Dᵀ(D z − z); then the prox of
        // ηλ‖·‖₁ restricted to a ≥ 0 is max(0, x − ηλ).
        let dz: Vec<f64> = (0..d).map(|r| (0..d).map(|c| dict[[r, c]] * z[[c, j]]).sum()).collect();
        for i in 0..d {
            let g: f64 = (0..d).map(|r| dict[[r, i]] * (dz[r] - z[[r, j]])).sum();
            out[[i, j]] = (z[[i, j]] - eta * g - eta * lambda).max(0.0);
        }
    }
    out
}

pub fn mlp_loop(z: &Array2<f64>, w1: &Array2<f64>, b1: &Array1<f64>, w2: &Array2<f64>, b2: &Array1<f64>) -> Array2<f64> {
    let (d, n) = z.dim();
    let h = w1.nrows();
    let gelu = |x: f64| 0.5 * x * (1.0 + libm_erf(x / std::f64::consts::SQRT_2));
    let mut out = z.clone();
    for j in 0..n {
        let act: Vec<f64> = (0..h).map(|r| gelu(b1[r] + (0..d).map(|c| w1[[r, c]] * z[[c, j]]).sum::<f64>())).collect();
        for i in 0..d {
            out[[i, j]] += b2[i] + (0..h).map(|r| w2[[i, r]] * act[r]).sum::<f64>();
        }
    }
    out
}

/// erf via its Maclaurin series (|x| ≤ 3) or the continued fraction tail;
/// accurate to ~1e-15, independent of the library's libm call.
pub fn libm_erf(x: f64) -> f64 {
    if x < 0.0 {
        return -libm_erf(-x);
    }
    if x <= 3.0 {
        let mut term = x;
        let mut sum = x;
        let mut n = 0.0;
        while term.abs() > 1e-17 * sum.abs() {
            n += 1.0;
            term *= -x * x / n;
            sum += term / (2.0 * n + 1.0);
        }
        return sum * 2.0 / std::f64::consts::PI.sqrt();
    }
    // erfc continued fraction (Lentz), converges quickly for x > 3.
    let mut f = x;
    let mut c = x;
    let mut dd = 0.0;
    for k in 1..200 {
        let a = k as f64 / 2.0;
        dd = 1.0 / (x + a * dd);
        c = x + a / c;
        let delta = c * dd;
        f *= delta;
        if (delta - 1.0).abs() < 1e-16 {
            break;
        }
    }
    1.0 - (-x * x).exp() / (f * std::f64::consts::PI.sqrt())
}

/// Full layer: LN1, attention with residual from LN1, LN2, ISTA or MLP.
pub fn layer_loop(z: &Array2<f64>, layer: &LayerParams, cfg: &ModelConfig) -> Array2<f64> {
    let zn = layer_norm_loop(z, &layer.ln1.gamma, &layer.ln1.beta);
    let (a, _) = attention_loop(&zn, layer, cfg);
    let zhalf = &zn + &a;
    let zn2 = layer_norm_loop(&zhalf, &layer.ln2.gamma, &layer.ln2.beta);
    match &layer.ff {
        FeedForward::Ista { dict } => ista_loop(&zn2, dict, cfg.ista_step, cfg.lambda),
        FeedForward::Mlp(p) => mlp_loop(&zn2, &p.w1, &p.b1, &p.w2, &p.b2),
    }
}

/// Cyclic Jacobi eigenvalue iteration; returns (ascending values, vectors as columns).
pub fn jacobi_eigen(a: &Array2<f64>) -> (Vec<f64>, Array2<f64>) {
    let n = a.nrows();
    let mut m = a.clone();
    let mut v = Array2::<f64>::eye(n);
    for _sweep in 0..100 {
        let off: f64 = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| m[[i, j]].powi(2)).sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if m[[p, q]].abs() < 1e-300 {
                    continue;
                }
                let theta = (m[[q, q]] - m[[p, p]]) / (2.0 * m[[p, q]]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (mkp, mkq) = (m[[k, p]], m[[k, q]]);
                    m[[k, p]] = c * mkp - s * mkq;
                    m[[k, q]] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let (mpk, mqk) = (m[[p, k]], m[[q, k]]);
                    m[[p, k]] = c * mpk - s * mqk;
                    m[[q, k]] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let (vkp, vkq) = (v[[k, p]], v[[k, q]]);
                    v[[k, p]] = c * vkp - s * vkq;
                    v[[k, q]] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[[i, i]].total_cmp(&m[[j, j]]));
    let values = order.iter().map(|&i| m[[i, i]]).collect();
    let vectors = Array2::from_shape_fn((n, n), |(r, c)| v[[r, order[c]]]);
    (values, vectors)
}

/// NCut of a bipartition computed straight from the definition.
pub fn ncut_direct(m: &Array2<f64>, side: &[bool]) -> f64 {
    let n = side.len();
    let (mut cut, mut vol_a, mut vol_b) = (0.0, 0.0, 0.0);
    for i in 0..n {
        for j in 0..n {
            let w = m[[i, j]];
            if side[i] {
                vol_a += w;
            } else {
                vol_b += w;
            }
            if side[i] && !side[j] {
                cut += w;
            }
        }
    }
    cut / vol_a + cut / vol_b
}

/// Minimum NCut over all proper nonempty subsets; returns (value, mask).
pub fn brute_force_ncut(m: &Array2<f64>) -> (f64, Vec<bool>) {
    let n = m.nrows();
    let mut best = (f64::INFINITY, Vec::new());
    // Fix node n-1 on the "false" side to visit each partition once.
    for bits in 1u32..(1 << (n - 1)) {
        let side: Vec<bool> = (0..n).map(|i| bits >> i & 1 == 1).collect();
        let v = ncut_direct(m, &side);
        if v < best.0 - 1e-12 {
            best = (v, side);
        }
    }
    best
}

/// Symmetric two-block affinity on n ≤ 8 nodes with a random block split.
pub fn two_block_graph(seed: u64) -> (Array2<f64>, Vec<bool>) {
    let mut r = rng(seed);
    let n = r.random_range(4..=8);
    let a = r.random_range(1..n);
    let mut block = vec![false; n];
    // Random placement of the first block so it is not always a prefix.
    let mut idx: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        idx.swap(i, r.random_range(0..=i));
    }
    for &i in &idx[..a] {
        block[i] = true;
    }
    let mut m = Array2::zeros((n, n));
    for i in 0..n {
        m[[i, i]] = 1.0;
        for j in i + 1..n {
            let w = if block[i] == block[j] { r.random_range(0.5..1.0) } else { r.random_range(0.0..0.15) };
            m[[i, j]] = w;
            m[[j, i]] = w;
        }
    }
    (m, block)
}
