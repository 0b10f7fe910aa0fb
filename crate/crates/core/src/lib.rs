//! FPSNet-style panoptic segmentation.
//!
//! A detector's boxes become soft attention masks; the masks are shuffled,
//! concatenated to a stride-8 feature map and fed to a fully convolutional
//! head whose first `n_att` output channels segment the instances in the same
//! slot order. A per-pixel argmax over the upsampled logits yields the
//! panoptic map directly, with no instance/semantic merging step.

pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod fusion;
pub mod geometry;
pub mod maskgen;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod panoptic;
pub mod pipeline;
pub mod training;

pub use error::{Error, Result};
pub use geometry::BoxXywh;
pub use maskgen::{AttentionStack, Detection};
pub use metrics::PqReport;
pub use model::{FpsNet, ModelConfig};
pub use panoptic::{LabelSpace, PanopticLabelMap, VOID_CLASS};

/// Output stride of the dense feature map, relative to the input image.
pub const FEATURE_STRIDE: usize = 8;
