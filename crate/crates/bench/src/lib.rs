//! Shared fixtures for the benchmarks.

use crate_core::analysis::affinity_matrix;
use crate_core::train::{examples_from_samples, generate_dataset, Example, SynthDataConfig};
use crate_core::{Arch, CrateModel, ModelConfig};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Entries uniform in [-1, 1).
pub fn uniform(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
    let mut r = rng(seed);
    Array2::from_shape_simple_fn((rows, cols), || r.random_range(-1.0..1.0))
}

/// `k` blocks of d × p with orthonormal columns (Gram-Schmidt).
pub fn subspaces(d: usize, p: usize, k: usize, seed: u64) -> Vec<Array2<f64>> {
    let mut q = uniform(d, p * k, seed);
    for j in 0..q.ncols() {
        for i in 0..j {
            let dot = q.column(i).dot(&q.column(j));
            let ci = q.column(i).to_owned();
            q.column_mut(j).scaled_add(-dot, &ci);
        }
        let norm = q.column(j).dot(&q.column(j)).sqrt();
        q.column_mut(j).mapv_inplace(|v| v / norm);
    }
    (0..k).map(|h| q.slice(ndarray::s![.., h * p..(h + 1) * p]).to_owned()).collect()
}

/// Desk-scale model of `arch` and `n` training examples for it.
pub fn desk(arch: Arch, n: usize) -> (CrateModel, Vec<Example>) {
    let model = CrateModel::init(&ModelConfig::desk(arch, 3), 0).unwrap();
    let samples = generate_dataset(&SynthDataConfig::default(), n).unwrap();
    let examples = examples_from_samples(&samples, &model).unwrap();
    (model, examples)
}

/// Thresholded cosine affinity over `n` random 64-dimensional tokens.
pub fn affinity(n: usize, seed: u64) -> Array2<f64> {
    let mut f = uniform(64, n, seed);
    // A shared offset gives the graph enough edges above the threshold.
    f.mapv_inplace(|v| v + 0.5);
    affinity_matrix(&f, 0.15, true).m
}
