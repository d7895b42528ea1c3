//! Supervised classification on synthetic shape images.

pub mod backward;
pub mod data;
pub mod loss;
pub mod optim;
pub mod trainer;

pub use backward::{backward, examples_from_samples, gradient_check, mean_loss, BatchGrad, Example, GradCheck, GRAD_CHECK_TOL};
pub use data::{normalize_image, BackgroundTexture, PIXEL_MEAN, PIXEL_STD, generate_dataset, generate_sample, patch_majority, Sample, SynthDataConfig, SHAPE_FAMILIES};
pub use loss::{argmax, cross_entropy, cross_entropy_grad};
pub use optim::{Optimizer, OptimizerConfig, OptimizerKind};
pub use trainer::{evaluate_accuracy, predict, EpochStats, TrainState, DIVERGENCE_LOSS};
