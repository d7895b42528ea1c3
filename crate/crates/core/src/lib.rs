//! White-box CRATE transformer.
//!
//! Each layer is one unrolled step of sparse rate reduction: a compression
//! step (multi-head subspace self-attention, [`model::attention`]) followed by
//! a sparsification step (one ISTA iteration, [`model::ista`]). The crate
//! bundles everything needed to train small instances on synthetic data and to
//! study the segmentation structure that emerges in their attention:
//!
//! - [`model`]: architecture, ablation variants, forward pass and traces.
//! - [`objective`]: coding rates, their gradients and the exact compression step.
//! - [`train`]: synthetic dataset, hand-derived backward pass, optimizers.
//! - [`analysis`]: attention maps, PCA, mIoU, normalized cuts, MaskCut, AP.
//! - [`io`]: checkpoints, PNM/PNG images, heatmaps, metrics reports.

pub mod analysis;
pub mod config;
pub mod error;
pub mod io;
pub mod linalg;
pub mod model;
pub mod objective;
pub mod train;

pub use config::{Arch, AttentionVariant, MlpVariant, ModelConfig};
pub use error::{Error, Result};
pub use model::{CrateModel, ForwardOutput, ForwardTrace, LayerParams, PatchEmbedding, TokenMatrix};
