//! Backbone, FPN-style merge, the panoptic head and a single-scale detector.

mod backbone;
mod block;
pub mod checkpoint;
pub mod detector;
mod fpn;
mod head;

pub use backbone::{pad_image, Backbone, FeaturePyramid};
pub use block::{BlockOrder, ConvBlock};
pub use detector::{DetectorHead, DetectorOutput};
pub use fpn::{DenseFeatureMap, FpnMerge};
pub use head::{PanopticHead, PanopticLogits};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Scalar, Visitor};

/// How attention masks are filled inside their box.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskKind {
    /// Gaussian centred on the box, max-normalized.
    #[default]
    Soft,
    /// Constant `c_att` everywhere inside the box.
    Hard,
}

/// How the box-derived diagonal covariance entries `w/4, h/4` are read.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SigmaMode {
    /// `sigma_x = w / 4`, `sigma_y = h / 4` (half-width at two sigma).
    #[default]
    StdDev,
    /// `sigma_x^2 = w / 4`, `sigma_y^2 = h / 4`, in input pixels.
    Variance,
}

/// Where the boxes feeding the attention masks come from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetectorKind {
    /// The anchor head on P3.
    #[default]
    Learned,
    /// Ground-truth boxes, optionally jittered and dropped.
    Oracle,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Number of attention-mask slots.
    pub n_att: usize,
    /// Peak value of an attention mask.
    pub c_att: f64,
    pub n_stuff: usize,
    pub n_things: usize,
    /// Channel depth shared by all pyramid levels.
    pub f_dim: usize,
    /// Channel width of the stride-2 and stride-4 backbone stages.
    pub backbone_width: usize,
    /// Extra stride-1 conv blocks per backbone stage.
    pub backbone_depth: usize,
    /// Channel width of the five 3x3 convs in the panoptic head.
    pub head_width: usize,
    /// Inputs are zero-padded up to a multiple of this.
    pub pad_multiple: usize,
    pub mask_kind: MaskKind,
    pub sigma_mode: SigmaMode,
    /// Shuffle attention-mask slots (training and inference).
    pub shuffle: bool,
    /// Shuffle seed used at inference time.
    pub inference_seed: u64,
    pub detector: DetectorKind,
    /// Side length of the unit-scale anchor, in input pixels.
    pub anchor_size: f64,
    pub score_threshold: f64,
    pub nms_iou: f64,
    pub max_detections: usize,
    pub bn_momentum: f64,
    pub init_std: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            n_att: 50,
            c_att: 50.0,
            n_stuff: 11,
            n_things: 8,
            f_dim: 64,
            backbone_width: 32,
            backbone_depth: 1,
            head_width: 128,
            pad_multiple: 128,
            mask_kind: MaskKind::Soft,
            sigma_mode: SigmaMode::StdDev,
            shuffle: true,
            inference_seed: 0,
            detector: DetectorKind::Learned,
            anchor_size: 32.0,
            score_threshold: 0.05,
            nms_iou: 0.5,
            max_detections: 100,
            bn_momentum: 0.9,
            init_std: 0.01,
        }
    }
}

impl ModelConfig {
    /// Output channels of the panoptic head: slots, stuff, unmatched things, unlabeled.
    pub fn n_out(&self) -> usize {
        self.n_att + self.n_stuff + 2
    }

    pub fn unmatched_channel(&self) -> usize {
        self.n_att + self.n_stuff
    }

    pub fn unlabeled_channel(&self) -> usize {
        self.n_att + self.n_stuff + 1
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        if self.n_att < 1 {
            return fail("n_att must be at least 1");
        }
        if !(self.c_att > 0.0) || !self.c_att.is_finite() {
            return fail("c_att must be positive");
        }
        if self.n_things < 1 {
            return fail("n_things must be at least 1");
        }
        if self.f_dim == 0 || self.backbone_width == 0 || self.head_width == 0 {
            return fail("channel widths must be positive");
        }
        if self.pad_multiple == 0 || self.pad_multiple % 32 != 0 {
            return fail("pad_multiple must be a positive multiple of 32");
        }
        if !(self.anchor_size > 0.0) {
            return fail("anchor_size must be positive");
        }
        if !(0.0..1.0).contains(&self.bn_momentum) {
            return fail("bn_momentum must be in [0, 1)");
        }
        Ok(())
    }
}

/// The full network: backbone, merge, panoptic head and detector head.
#[derive(Clone, Debug)]
pub struct FpsNet<T> {
    pub config: ModelConfig,
    pub backbone: Backbone<T>,
    pub fpn: FpnMerge<T>,
    pub head: PanopticHead<T>,
    pub detector: DetectorHead<T>,
}

impl<T: Scalar> FpsNet<T> {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(Self {
            backbone: Backbone::new(&config, &mut rng),
            fpn: FpnMerge::new(&config, &mut rng),
            head: PanopticHead::new(&config, &mut rng),
            detector: DetectorHead::new(&config, &mut rng),
            config,
        })
    }

    /// Pyramid and stride-8 dense features for a padded, normalized batch.
    pub fn features(&mut self, batch: &ndarray::Array4<T>, train: bool) -> Result<(FeaturePyramid<T>, DenseFeatureMap<T>)> {
        let pyramid = self.backbone.forward(batch, train)?;
        let dense = self.fpn.forward(pyramid.p3(), pyramid.p4(), pyramid.p5())?;
        Ok((pyramid, dense))
    }

    /// Walk every named tensor in a fixed order.
    pub fn visit(&mut self, f: &mut Visitor<'_, T>) {
        self.backbone.visit("backbone", f);
        self.fpn.visit("fpn", f);
        self.head.visit("head", f);
        self.detector.visit("detector", f);
    }

    pub fn zero_grad(&mut self) {
        self.visit(&mut |_, slot| {
            if let crate::nn::ParamSlot::Trainable(p) = slot {
                p.zero_grad();
            }
        });
    }

    pub fn num_parameters(&mut self) -> usize {
        let mut n = 0;
        self.visit(&mut |_, slot| {
            if let crate::nn::ParamSlot::Trainable(p) = slot {
                n += p.value.len();
            }
        });
        n
    }

    /// Same weights in another precision.
    pub fn cast<U: Scalar>(&mut self) -> FpsNet<U> {
        let mut out = FpsNet::<U>::new(self.config.clone(), 0).expect("validated config");
        let mut values = Vec::new();
        self.visit(&mut |_, slot| {
            values.push(slot.value().mapv(|v| v.to_f64().unwrap()));
        });
        let mut it = values.into_iter();
        out.visit(&mut |_, mut slot| {
            let v = it.next().expect("same layout");
            *slot.value_mut() = v.mapv(|x| U::from(x).unwrap());
        });
        out
    }
}
