//! Checkpoints, image files, heatmap rendering, metrics reports and dataset
//! directories.

pub mod checkpoint;
pub mod dataset;
pub mod image;
pub mod metrics;
pub mod render;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, FORMAT_VERSION, MAGIC};
pub use dataset::{export_dataset, import_dataset, load_manifest, Dataset, Manifest, ManifestEntry, Split, MANIFEST};
pub use image::{decode_image, decode_pnm, encode_pnm, read_image, to_u8, write_image};
pub use metrics::{AnalysisMetrics, ApSummary, LayerRate, MetricsReport};
pub use render::{colormap, overlay_mask, render_heatmap, COLORMAP, MASK_COLOR};
