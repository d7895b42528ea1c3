//! Simplified single-class average precision for predicted masks.
//!
//! Within each image, predictions are taken in descending score order and
//! matched greedily to the unmatched ground truth of highest IoU, provided it
//! reaches the threshold. All predictions are then ranked by score across the
//! dataset and AP is the area under the precision envelope (all-point
//! interpolation).

use serde::{Deserialize, Serialize};

use super::miou::iou;

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredMask {
    pub bits: Vec<bool>,
    pub score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ApReport {
    pub ap50: f64,
    pub ap75: f64,
    /// Mean over IoU thresholds 0.50:0.05:0.95.
    pub ap: f64,
    pub num_gt: usize,
    pub num_pred: usize,
    /// No ground truth: the AP values are NaN-free zeros but meaningless.
    pub undefined: bool,
}

/// AP at a single IoU threshold; `None` without ground truth.
pub fn average_precision_at(preds: &[Vec<ScoredMask>], gts: &[Vec<Vec<bool>>], threshold: f64) -> Option<f64> {
    let num_gt: usize = gts.iter().map(|g| g.len()).sum();
    if num_gt == 0 {
        return None;
    }
    let mut ranked: Vec<(f64, usize, bool)> = Vec::new();
    for (img, (p, g)) in preds.iter().zip(gts).enumerate() {
        let mut order: Vec<usize> = (0..p.len()).collect();
        order.sort_by(|&a, &b| p[b].score.total_cmp(&p[a].score).then(a.cmp(&b)));
        let mut taken = vec![false; g.len()];
        for i in order {
            let mut best: Option<(usize, f64)> = None;
            for (j, gt) in g.iter().enumerate() {
                if taken[j] {
                    continue;
                }
                let v = iou(&p[i].bits, gt).unwrap_or(0.0);
                if v >= threshold && best.is_none_or(|(_, b)| v > b) {
                    best = Some((j, v));
                }
            }
            if let Some((j, _)) = best {
                taken[j] = true;
            }
            ranked.push((p[i].score, img, best.is_some()));
        }
    }
    ranked.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let mut tp = 0usize;
    let mut points = Vec::with_capacity(ranked.len());
    for (k, &(_, _, hit)) in ranked.iter().enumerate() {
        tp += hit as usize;
        points.push((tp as f64 / num_gt as f64, tp as f64 / (k + 1) as f64));
    }
    // Precision envelope from the right, then area over recall steps.
    for k in (0..points.len().saturating_sub(1)).rev() {
        points[k].1 = points[k].1.max(points[k + 1].1);
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for &(r, p) in &points {
        ap += (r - prev_recall) * p;
        prev_recall = r;
    }
    Some(ap)
}

pub fn average_precision(preds: &[Vec<ScoredMask>], gts: &[Vec<Vec<bool>>]) -> ApReport {
    let num_gt = gts.iter().map(|g| g.len()).sum();
    let num_pred = preds.iter().map(|p| p.len()).sum();
    let at = |t: f64| average_precision_at(preds, gts, t);
    let Some(ap50) = at(0.5) else {
        return ApReport { ap50: 0.0, ap75: 0.0, ap: 0.0, num_gt, num_pred, undefined: true };
    };
    let ap75 = at(0.75).unwrap_or(0.0);
    let ap = (0..10).map(|i| at(0.5 + 0.05 * i as f64).unwrap_or(0.0)).sum::<f64>() / 10.0;
    ApReport { ap50, ap75, ap, num_gt, num_pred, undefined: false }
}
