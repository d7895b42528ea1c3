//! Patch affinities, spectral Normalized Cuts and iterative MaskCut.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::SymEigen;

/// Symmetric N × N patch affinity.
#[derive(Debug, Clone, PartialEq)]
pub struct AffinityMatrix {
    pub m: Array2<f64>,
    pub tau: f64,
    /// Tokens whose features had zero norm; their rows and columns are 0.
    pub zero_norm: Vec<usize>,
}

/// Affinity between the columns of `features` (F × N). With `normalize`,
/// columns are scaled to unit norm first (cosine affinity). Entries below
/// `tau` become 0.
pub fn affinity_matrix(features: &Array2<f64>, tau: f64, normalize: bool) -> AffinityMatrix {
    let n = features.ncols();
    let norms: Vec<f64> = features.columns().into_iter().map(|c| c.dot(&c).sqrt()).collect();
    let zero_norm: Vec<usize> = (0..n).filter(|&i| norms[i] == 0.0).collect();
    let mut m = Array2::zeros((n, n));
    for i in 0..n {
        for j in i..n {
            if norms[i] == 0.0 || norms[j] == 0.0 {
                continue;
            }
            let mut v = features.column(i).dot(&features.column(j));
            if normalize {
                v /= norms[i] * norms[j];
            }
            if v < tau {
                v = 0.0;
            }
            m[[i, j]] = v;
            m[[j, i]] = v;
        }
    }
    AffinityMatrix { m, tau, zero_norm }
}

fn has_positive_off_diagonal(m: &Array2<f64>) -> bool {
    m.indexed_iter().any(|((i, j), &v)| i != j && v > 0.0)
}

/// NCut(A, B) = cut(A, B)/assoc(A, V) + cut(A, B)/assoc(B, V), with degrees
/// taken from `m` as given (self-affinities included).
pub fn ncut_value(m: &Array2<f64>, side: &[bool]) -> f64 {
    let n = side.len();
    let (mut cut, mut assoc_a, mut assoc_b) = (0.0, 0.0, 0.0);
    for i in 0..n {
        let deg: f64 = m.row(i).sum();
        if side[i] {
            assoc_a += deg;
            for j in 0..n {
                if !side[j] {
                    cut += m[[i, j]];
                }
            }
        } else {
            assoc_b += deg;
        }
    }
    if assoc_a == 0.0 || assoc_b == 0.0 {
        return f64::INFINITY;
    }
    cut / assoc_a + cut / assoc_b
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bipartition {
    /// True for the foreground side.
    pub mask: Vec<bool>,
    pub ncut: f64,
    /// Relaxed indicator y = D^{-1/2} v over all nodes (0 for zero-degree nodes).
    pub eigenvector: Vec<f64>,
}

/// Spectral bipartition: the second-smallest eigenvector of the normalized
/// Laplacian `I − D^{-1/2} M D^{-1/2}`, mapped back by `D^{-1/2}`, is swept
/// over every split between distinct sorted values and the split with the
/// smallest NCut is kept (lowest threshold on ties).
///
/// The foreground is the side of smaller volume (total degree); on equal
/// volumes, the side holding the entry of largest magnitude, then the side
/// holding the lowest active index. Tokens without a positive off-diagonal affinity are
/// background. A disconnected graph is cut around its smallest-volume
/// component (lowest index on ties), where the relaxed indicator peaks.
pub fn ncut_bipartition(m: &Array2<f64>) -> Result<Bipartition> {
    let n = m.nrows();
    if m.ncols() != n {
        return Err(Error::shape("affinity must be square"));
    }
    if m.iter().any(|&v| v < 0.0 || !v.is_finite()) {
        return Err(Error::config("affinity must be finite and nonnegative"));
    }
    if !has_positive_off_diagonal(m) {
        return Err(Error::config("affinity has no positive off-diagonal entry"));
    }
    let degree: Vec<f64> = (0..n).map(|i| m.row(i).sum()).collect();
    let active: Vec<usize> = (0..n).filter(|&i| (0..n).any(|j| j != i && m[[i, j]] > 0.0)).collect();
    let na = active.len();

    let components = components(m, &active);
    if components.len() > 1 {
        // Every component boundary has NCut 0; the relaxed indicator orthogonal
        // to D^{1/2}1 is largest in magnitude on the smaller-volume side.
        let vol = |c: &Vec<usize>| c.iter().map(|&i| degree[i]).sum::<f64>();
        let fg = components
            .iter()
            .min_by(|a, b| vol(a).total_cmp(&vol(b)).then(a[0].cmp(&b[0])))
            .expect("nonempty");
        let mut mask = vec![false; n];
        let mut eigenvector = vec![0.0; n];
        let (va, vt) = (vol(fg), active.iter().map(|&i| degree[i]).sum::<f64>());
        for &i in &active {
            eigenvector[i] = -1.0 / (vt - va);
        }
        for &i in fg {
            mask[i] = true;
            eigenvector[i] = 1.0 / va;
        }
        return Ok(Bipartition { ncut: ncut_value(m, &mask), mask, eigenvector });
    }

    let inv_sqrt: Vec<f64> = active.iter().map(|&i| 1.0 / degree[i].sqrt()).collect();
    // Normalized Laplacian with the trivial eigenvector D^{1/2}1 deflated to
    // eigenvalue 3 (above the spectrum's bound of 2).
    let total: f64 = active.iter().map(|&i| degree[i]).sum();
    let trivial: Vec<f64> = active.iter().map(|&i| (degree[i] / total).sqrt()).collect();
    let lap = Array2::from_shape_fn((na, na), |(a, b)| {
        let v = -m[[active[a], active[b]]] * inv_sqrt[a] * inv_sqrt[b] + 3.0 * trivial[a] * trivial[b];
        if a == b {
            1.0 + v
        } else {
            v
        }
    });
    let eig = SymEigen::new(&lap)?;
    let y: Array1<f64> = Array1::from_shape_fn(na, |a| eig.vectors[[a, 0]] * inv_sqrt[a]);

    // Sweep: nodes sorted by y; side A is the prefix.
    let mut order: Vec<usize> = (0..na).collect();
    order.sort_by(|&a, &b| y[a].total_cmp(&y[b]).then(a.cmp(&b)));
    let mut in_a = vec![false; na];
    let (mut cut, mut assoc_a) = (0.0, 0.0);
    let mut best = (f64::INFINITY, 0usize);
    for (pos, &a) in order.iter().enumerate().take(na - 1) {
        // Moving `a` from B to A.
        let i = active[a];
        let (mut to_a, mut to_b) = (0.0, 0.0);
        for (b, &j) in active.iter().enumerate() {
            if b == a {
                continue;
            }
            if in_a[b] {
                to_a += m[[i, j]];
            } else {
                to_b += m[[i, j]];
            }
        }
        cut += to_b - to_a;
        assoc_a += degree[i];
        in_a[a] = true;
        let next = order[pos + 1];
        if y[next] == y[a] {
            continue;
        }
        let assoc_b = total - assoc_a;
        let value = if assoc_a > 0.0 && assoc_b > 0.0 { cut.max(0.0) / assoc_a + cut.max(0.0) / assoc_b } else { f64::INFINITY };
        if value < best.0 {
            best = (value, pos + 1);
        }
    }
    if !best.0.is_finite() {
        return Err(Error::Numerical("normalized cut sweep found no valid split".into()));
    }
    let mut side_a = vec![false; na];
    for &a in &order[..best.1] {
        side_a[a] = true;
    }
    let vol_a: f64 = (0..na).filter(|&a| side_a[a]).map(|a| degree[active[a]]).sum();
    let vol_b = total - vol_a;
    let fg_is_a = if (vol_a - vol_b).abs() > 1e-12 * total {
        vol_a < vol_b
    } else {
        let max_mag = y.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
        let tol = 1e-12 * max_mag.max(1e-300);
        let peak_a = (0..na).any(|a| side_a[a] && (y[a].abs() - max_mag).abs() <= tol);
        let peak_b = (0..na).any(|a| !side_a[a] && (y[a].abs() - max_mag).abs() <= tol);
        match (peak_a, peak_b) {
            (true, false) => true,
            (false, true) => false,
            _ => side_a[0],
        }
    };
    let mut mask = vec![false; n];
    let mut eigenvector = vec![0.0; n];
    for (a, &i) in active.iter().enumerate() {
        mask[i] = side_a[a] == fg_is_a;
        eigenvector[i] = y[a];
    }
    let ncut = ncut_value(m, &mask);
    Ok(Bipartition { mask, ncut, eigenvector })
}

/// Connected components over positive off-diagonal affinities, each sorted,
/// ordered by smallest member.
fn components(m: &Array2<f64>, nodes: &[usize]) -> Vec<Vec<usize>> {
    let n = m.nrows();
    let mut seen = vec![false; n];
    let mut out = Vec::new();
    for &start in nodes {
        if seen[start] {
            continue;
        }
        seen[start] = true;
        let mut stack = vec![start];
        let mut comp = Vec::new();
        while let Some(i) = stack.pop() {
            comp.push(i);
            for j in 0..n {
                if j != i && !seen[j] && m[[i, j]] > 0.0 {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        comp.sort_unstable();
        out.push(comp);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaskCutConfig {
    /// Expected number of objects.
    pub n: usize,
    /// Affinity threshold.
    pub tau: f64,
}

impl Default for MaskCutConfig {
    fn default() -> Self {
        MaskCutConfig { n: 3, tau: 0.15 }
    }
}

impl MaskCutConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::config("MaskCut n must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.tau) {
            return Err(Error::config(format!("MaskCut tau must lie in [0, 1), got {}", self.tau)));
        }
        Ok(())
    }
}

/// Inclusive bounding box in patch coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub row0: usize,
    pub col0: usize,
    pub row1: usize,
    pub col1: usize,
}

pub fn bounding_box(mask: &[bool], grid: (usize, usize)) -> Option<BoundingBox> {
    let mut bb: Option<BoundingBox> = None;
    for (i, _) in mask.iter().enumerate().filter(|(_, &b)| b) {
        let (r, c) = (i / grid.1, i % grid.1);
        bb = Some(match bb {
            None => BoundingBox { row0: r, col0: c, row1: r, col1: c },
            Some(b) => BoundingBox { row0: b.row0.min(r), col0: b.col0.min(c), row1: b.row1.max(r), col1: b.col1.max(c) },
        });
    }
    bb
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectMask {
    pub bits: Vec<bool>,
    pub ncut: f64,
    /// 1 − NCut/2, in [0, 1].
    pub score: f64,
    pub bbox: Option<BoundingBox>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskCutResult {
    pub masks: Vec<ObjectMask>,
    /// Set when fewer than `n` masks were produced.
    pub early_stop: bool,
}

/// Repeated normalized cuts; after each cut the claimed tokens' rows and
/// columns are zeroed so later masks are disjoint from earlier ones.
pub fn maskcut(affinity: &Array2<f64>, grid: (usize, usize), cfg: &MaskCutConfig) -> Result<MaskCutResult> {
    cfg.validate()?;
    if affinity.nrows() != grid.0 * grid.1 {
        return Err(Error::shape(format!("affinity over {} tokens does not fit a {}×{} grid", affinity.nrows(), grid.0, grid.1)));
    }
    let mut m = affinity.clone();
    let mut masks = Vec::new();
    for _ in 0..cfg.n {
        if !has_positive_off_diagonal(&m) {
            break;
        }
        let cut = ncut_bipartition(&m)?;
        if !cut.mask.iter().any(|&b| b) {
            break;
        }
        for (i, _) in cut.mask.iter().enumerate().filter(|(_, &b)| b) {
            m.row_mut(i).fill(0.0);
            m.column_mut(i).fill(0.0);
        }
        let bbox = bounding_box(&cut.mask, grid);
        masks.push(ObjectMask { score: (1.0 - cut.ncut / 2.0).clamp(0.0, 1.0), ncut: cut.ncut, bits: cut.mask, bbox });
    }
    Ok(MaskCutResult { early_stop: masks.len() < cfg.n, masks })
}
