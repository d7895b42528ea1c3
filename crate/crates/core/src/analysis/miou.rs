//! Intersection-over-union scoring with best-head matching.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use super::attention::SegMask;

/// |a ∧ b| / |a ∨ b|; `None` when both are empty.
pub fn iou(a: &[bool], b: &[bool]) -> Option<f64> {
    let (mut inter, mut union) = (0usize, 0usize);
    for (&x, &y) in a.iter().zip(b) {
        inter += (x && y) as usize;
        union += (x || y) as usize;
    }
    (union > 0).then(|| inter as f64 / union as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IoUReport {
    /// Best-head IoU per class.
    pub per_class: BTreeMap<usize, f64>,
    /// Head achieving it (lowest index on ties).
    pub best_head: BTreeMap<usize, usize>,
    /// Mean of `per_class`; `None` when every class was skipped.
    pub miou: Option<f64>,
    /// Classes whose ground truth is empty.
    pub skipped: Vec<usize>,
}

/// Scores one image: for each class, the best IoU over the per-head masks,
/// then the mean over classes.
pub fn miou(head_masks: &[SegMask], gt: &[(usize, Vec<bool>)]) -> IoUReport {
    let mut per_class = BTreeMap::new();
    let mut best_head = BTreeMap::new();
    let mut skipped = Vec::new();
    for (class, truth) in gt {
        if !truth.iter().any(|&b| b) {
            skipped.push(*class);
            continue;
        }
        let mut best = (0usize, f64::NEG_INFINITY);
        for (k, m) in head_masks.iter().enumerate() {
            let v = iou(&m.bits, truth).unwrap_or(0.0);
            if v > best.1 {
                best = (k, v);
            }
        }
        if head_masks.is_empty() {
            best.1 = 0.0;
        }
        per_class.insert(*class, best.1);
        best_head.insert(*class, best.0);
    }
    let miou = (!per_class.is_empty()).then(|| per_class.values().sum::<f64>() / per_class.len() as f64);
    IoUReport { per_class, best_head, miou, skipped }
}
