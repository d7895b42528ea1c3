//! Batch gradients of the mean cross-entropy and their finite-difference check.

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::data::{normalize_image, Sample};
use super::loss::{argmax, cross_entropy, cross_entropy_grad};
use crate::error::{Error, Result};
use crate::model::{patchify, CrateModel};

/// Samples per reduction chunk; fixes the floating-point summation order
/// independently of the thread count.
const CHUNK: usize = 8;

/// A patchified, labeled input.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub patches: Array2<f64>,
    pub label: usize,
}

pub fn examples_from_samples(samples: &[Sample], model: &CrateModel) -> Result<Vec<Example>> {
    samples
        .iter()
        .map(|s| {
            if s.label >= model.config.num_classes {
                return Err(Error::config(format!("label {} out of range for {} classes", s.label, model.config.num_classes)));
            }
            Ok(Example { patches: patchify(&normalize_image(&s.image), &model.config)?, label: s.label })
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct BatchGrad {
    /// Mean loss over the batch.
    pub loss: f64,
    /// Gradient of the mean loss, laid out like the model.
    pub grad: CrateModel,
    pub correct: usize,
    pub losses: Vec<f64>,
}

fn non_finite(model: &CrateModel, grad: Option<&CrateModel>) -> Error {
    let culprit = model
        .first_non_finite()
        .map(|p| format!("parameter {p}"))
        .or_else(|| grad.and_then(|g| g.first_non_finite()).map(|p| format!("gradient of {p}")))
        .unwrap_or_else(|| "loss (logits overflow)".to_string());
    Error::Numerical(format!("non-finite loss; first offender: {culprit}"))
}

/// Gradient of the mean cross-entropy over `batch`.
pub fn backward(model: &CrateModel, batch: &[Example]) -> Result<BatchGrad> {
    if batch.is_empty() {
        return Err(Error::config("empty batch"));
    }
    let partials: Vec<Result<(CrateModel, Vec<f64>, usize)>> = batch
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut grad = model.zeros_like();
            let mut losses = Vec::with_capacity(chunk.len());
            let mut correct = 0;
            for ex in chunk {
                let cache = model.forward_cached(&ex.patches)?;
                let (loss, dlogits) = cross_entropy_grad(cache.logits.view(), ex.label);
                if argmax(cache.logits.view()) == ex.label {
                    correct += 1;
                }
                losses.push(loss);
                model.backward(&cache, &dlogits, &mut grad);
            }
            Ok((grad, losses, correct))
        })
        .collect();
    let mut grad = model.zeros_like();
    let mut losses = Vec::with_capacity(batch.len());
    let mut correct = 0;
    for part in partials {
        let (g, l, c) = part?;
        grad.add_scaled(&g, 1.0);
        losses.extend(l);
        correct += c;
    }
    let n = batch.len() as f64;
    grad.scale(1.0 / n);
    let loss = losses.iter().sum::<f64>() / n;
    if !loss.is_finite() || grad.first_non_finite().is_some() {
        return Err(non_finite(model, Some(&grad)));
    }
    Ok(BatchGrad { loss, grad, correct, losses })
}

/// Mean cross-entropy without gradients.
pub fn mean_loss(model: &CrateModel, batch: &[Example]) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::config("empty batch"));
    }
    let mut total = 0.0;
    for ex in batch {
        let out = model.forward_patches(&ex.patches, false)?;
        total += cross_entropy(out.logits.view(), ex.label);
    }
    let loss = total / batch.len() as f64;
    if !loss.is_finite() {
        return Err(non_finite(model, None));
    }
    Ok(loss)
}

/// Finite-difference agreement for one parameter tensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheck {
    pub name: String,
    pub group: String,
    pub analytic_norm: f64,
    pub numeric_norm: f64,
    /// ‖g_analytic − g_numeric‖ / max(‖g_analytic‖, ‖g_numeric‖); 0 when both vanish.
    pub rel_error: f64,
    pub pass: bool,
}

pub const GRAD_CHECK_TOL: f64 = 1e-4;

/// Compares the analytic gradient with central differences of step `h` for
/// every parameter tensor.
pub fn gradient_check(model: &CrateModel, batch: &[Example], h: f64) -> Result<Vec<GradCheck>> {
    let analytic = backward(model, batch)?.grad;
    let mut probe = model.clone();
    let count = model.params().len();
    let mut out = Vec::with_capacity(count);
    for idx in 0..count {
        let (name, group, len) = {
            let p = &model.params()[idx];
            (p.name.clone(), p.group.name().to_string(), p.values.len())
        };
        let mut numeric = Vec::with_capacity(len);
        for j in 0..len {
            let orig = model.params()[idx].values.as_slice_memory_order().expect("contiguous")[j];
            let set = |m: &mut CrateModel, v: f64| {
                m.params_mut()[idx].values.as_slice_memory_order_mut().expect("contiguous")[j] = v;
            };
            set(&mut probe, orig + h);
            let plus = mean_loss(&probe, batch)?;
            set(&mut probe, orig - h);
            let minus = mean_loss(&probe, batch)?;
            set(&mut probe, orig);
            numeric.push((plus - minus) / (2.0 * h));
        }
        let a = analytic.params()[idx].values.as_slice_memory_order().expect("contiguous").to_vec();
        let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let diff: Vec<f64> = a.iter().zip(&numeric).map(|(x, y)| x - y).collect();
        let (na, nn) = (norm(&a), norm(&numeric));
        let denom = na.max(nn);
        let rel_error = if denom == 0.0 { 0.0 } else { norm(&diff) / denom };
        out.push(GradCheck { name, group, analytic_norm: na, numeric_norm: nn, rel_error, pass: rel_error < GRAD_CHECK_TOL });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{Arch, ModelConfig};
    use ndarray::Array3;

    fn tiny_batch(cfg: &ModelConfig, n: usize) -> Vec<Example> {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        (0..n)
            .map(|i| {
                let img = Array3::from_shape_fn((cfg.channels, cfg.height, cfg.width), |_| rng.random::<f64>());
                Example { patches: patchify(&img, cfg).unwrap(), label: i % cfg.num_classes }
            })
            .collect()
    }

    #[test]
    fn duplicated_sample_keeps_mean_gradient() {
        let cfg = ModelConfig::tiny(Arch::Crate);
        let model = CrateModel::init(&cfg, 1).unwrap();
        let one = tiny_batch(&cfg, 1);
        let two = vec![one[0].clone(), one[0].clone()];
        let g1 = backward(&model, &one).unwrap();
        let g2 = backward(&model, &two).unwrap();
        for (a, b) in g1.grad.params().iter().zip(g2.grad.params().iter()) {
            for (x, y) in a.values.iter().zip(b.values.iter()) {
                assert!((x - y).abs() <= 1e-15 * (1.0 + x.abs()));
            }
        }
    }

    #[test]
    fn dead_patch_branch() {
        let cfg = ModelConfig::tiny(Arch::Crate);
        let mut model = CrateModel::init(&cfg, 2).unwrap();
        model.embedding.projection.fill(0.0);
        let batch = vec![Example { patches: Array2::zeros((cfg.patch_dim(), cfg.num_patches())), label: 0 }];
        let g = backward(&model, &batch).unwrap().grad;
        assert!(g.embedding.projection.iter().all(|&v| v == 0.0));
        assert!(g.embedding.class_token.iter().any(|&v| v != 0.0));
        assert!(g.head.iter().any(|&v| v != 0.0));
    }

    #[test]
    fn finite_differences_all_variants() {
        for arch in Arch::ALL {
            let cfg = ModelConfig::tiny(arch);
            let model = CrateModel::init(&cfg, 11).unwrap();
            let batch = tiny_batch(&cfg, 3);
            for check in gradient_check(&model, &batch, 1e-5).unwrap() {
                assert!(check.pass, "{arch}: {check:?}");
            }
        }
    }

    #[test]
    fn non_finite_names_offender() {
        let cfg = ModelConfig::tiny(Arch::Crate);
        let mut model = CrateModel::init(&cfg, 1).unwrap();
        model.head[[0, 0]] = f64::NAN;
        let err = backward(&model, &tiny_batch(&cfg, 1)).unwrap_err().to_string();
        assert!(err.contains("head"), "{err}");
    }
}
