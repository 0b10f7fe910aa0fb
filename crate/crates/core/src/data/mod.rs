//! Datasets: the synthetic shapes world, COCO-panoptic files, augmentation.

pub mod augment;
pub mod coco;
pub mod synthetic;

use ndarray::{Array3, Array4, Axis};

use crate::error::Result;
use crate::panoptic::{GroundTruthInstance, LabelSpace, PanopticLabelMap};

pub use augment::{augment, AugmentConfig};
pub use coco::{load_coco_panoptic, write_coco_panoptic, CocoDataset};
pub use synthetic::{generate_sample, SyntheticConfig, SyntheticDataset};

/// Per-channel normalization constants (ImageNet statistics).
pub const PIXEL_MEAN: [f32; 3] = [0.485, 0.456, 0.406];
pub const PIXEL_STD: [f32; 3] = [0.229, 0.224, 0.225];

/// One training/evaluation example.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub name: String,
    /// `[H, W, 3]` RGB in `[0, 1]`.
    pub image: Array3<f32>,
    pub gt_panoptic: PanopticLabelMap,
    pub gt_instances: Vec<GroundTruthInstance>,
}

impl Sample {
    pub fn new(name: String, image: Array3<f32>, gt_panoptic: PanopticLabelMap, labels: &LabelSpace) -> Self {
        let gt_instances = gt_panoptic.instances(labels);
        Self {
            name,
            image,
            gt_panoptic,
            gt_instances,
        }
    }

    pub fn height(&self) -> usize {
        self.image.dim().0
    }

    pub fn width(&self) -> usize {
        self.image.dim().1
    }
}

/// Indexable source of samples.
pub trait Dataset {
    fn len(&self) -> usize;
    fn get(&self, index: usize) -> Result<Sample>;
    fn labels(&self) -> &LabelSpace;
    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Normalize `[H, W, 3]` images into one `[N, H, W, 3]` batch. All images
/// must share a size.
pub fn normalize_batch(images: &[&Array3<f32>]) -> Array4<f32> {
    let views: Vec<_> = images.iter().map(|im| im.view()).collect();
    let mut batch = ndarray::stack(Axis(0), &views).expect("equal image sizes");
    for (c, (m, s)) in PIXEL_MEAN.iter().zip(PIXEL_STD).enumerate() {
        batch
            .index_axis_mut(Axis(3), c)
            .mapv_inplace(|v| (v - m) / s);
    }
    batch
}
