//! Emergence analysis: attention maps, PCA feature maps, mIoU, normalized
//! cuts, MaskCut and average precision.

pub mod ap;
pub mod attention;
pub mod eval;
pub mod miou;
pub mod ncut;
pub mod pca;

pub use ap::{average_precision, average_precision_at, ApReport, ScoredMask};
pub use attention::{attention_to_mask, class_token_attention, layer_attention_maps, top_count, AttentionMap, SegMask};
pub use eval::{affinity_from_trace, attention_masks, maskcut_ap, random_mask_miou, sample_maskcut, segmentation_miou, token_features, SegEval};
pub use miou::{iou, miou, IoUReport};
pub use ncut::{affinity_matrix, bounding_box, maskcut, ncut_bipartition, ncut_value, AffinityMatrix, Bipartition, BoundingBox, MaskCutConfig, MaskCutResult, ObjectMask};
pub use pca::{pca_patch_visualization, principal_directions, PcaVisualization, PCA_THRESHOLD};
