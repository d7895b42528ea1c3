//! Softmax cross-entropy.

use ndarray::{Array1, ArrayView1};

fn log_sum_exp(logits: ArrayView1<f64>) -> (f64, f64) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = logits.iter().map(|&v| (v - max).exp()).sum();
    (max, max + sum.ln())
}

/// −log softmax(logits)[y].
pub fn cross_entropy(logits: ArrayView1<f64>, y: usize) -> f64 {
    let (_, lse) = log_sum_exp(logits);
    lse - logits[y]
}

/// Loss and dLoss/dlogits = softmax(logits) − onehot(y).
pub fn cross_entropy_grad(logits: ArrayView1<f64>, y: usize) -> (f64, Array1<f64>) {
    let (_, lse) = log_sum_exp(logits);
    let mut g = logits.mapv(|v| (v - lse).exp());
    g[y] -= 1.0;
    (lse - logits[y], g)
}

/// Index of the largest logit; ties go to the lowest index.
pub fn argmax(logits: ArrayView1<f64>) -> usize {
    let mut best = 0;
    for (i, &v) in logits.iter().enumerate() {
        if v > logits[best] {
            best = i;
        }
    }
    best
}
