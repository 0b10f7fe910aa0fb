//! Slot matching, order-preserving targets, losses and the SGD loop.

pub mod detection_loss;
pub mod loss;
pub mod matching;
mod optim;
mod run;
mod step;
pub mod target;

pub use detection_loss::{detection_loss, DetectionLoss};
pub use loss::panoptic_loss;
pub use matching::{match_masks, match_masks_with, IouKind, MatchAssignment};
pub use optim::{poly_lr, Sgd};
pub use run::{order_preservation, train_loop, MetricsRecord, OrderStats, TrainOutcome};
pub use step::{prepare_targets, train_step, PreparedTargets, StepStats};
pub use target::{build_target, TargetMap};

use serde::{Deserialize, Serialize};

use crate::data::AugmentConfig;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lambda_det: f64,
    pub lambda_pan: f64,
    pub lr0: f64,
    pub power: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub total_steps: usize,
    pub augment: AugmentConfig,
    /// Oracle mode: relative box jitter and drop probability during training.
    pub oracle_jitter: f64,
    pub oracle_drop: f64,
    pub iou_kind: IouKind,
    /// 0 disables periodic checkpoints (the final one is always written).
    pub checkpoint_every: usize,
    /// 0 disables periodic validation (a final one runs when a split is given).
    pub val_every: usize,
    /// Cap on validation images per evaluation.
    pub val_images: Option<usize>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda_det: 0.5,
            lambda_pan: 1.0,
            lr0: 0.01,
            power: 0.9,
            momentum: 0.9,
            weight_decay: 0.001,
            batch_size: 4,
            total_steps: 1000,
            augment: AugmentConfig::default(),
            oracle_jitter: 0.0,
            oracle_drop: 0.0,
            iou_kind: IouKind::Box,
            checkpoint_every: 0,
            val_every: 0,
            val_images: None,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.lambda_det >= 0.0 && self.lambda_pan >= 0.0) {
            return fail("loss weights must be non-negative");
        }
        if !(self.lr0 > 0.0) {
            return fail("lr0 must be positive");
        }
        if !(self.power > 0.0 && self.power <= 2.0) {
            return fail("power must lie in (0, 2]");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return fail("momentum must lie in [0, 1)");
        }
        if !(self.weight_decay >= 0.0) {
            return fail("weight_decay must be non-negative");
        }
        if self.batch_size == 0 || self.total_steps == 0 {
            return fail("batch_size and total_steps must be positive");
        }
        if !(self.oracle_jitter >= 0.0) || !(0.0..=1.0).contains(&self.oracle_drop) {
            return fail("oracle jitter must be >= 0 and drop rate in [0, 1]");
        }
        self.augment.validate()
    }
}

/// `L = lambda_det * L_det + lambda_pan * L_pan`.
pub fn total_loss(l_det: f64, l_pan: f64, config: &TrainConfig) -> f64 {
    config.lambda_det * l_det + config.lambda_pan * l_pan
}
