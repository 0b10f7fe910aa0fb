use rand::Rng;

use super::detection_loss::detection_loss;
use super::loss::panoptic_loss;
use super::matching::{match_masks_with, MatchAssignment};
use super::target::{build_target, TargetMap};
use super::{total_loss, TrainConfig};
use crate::data::Sample;
use crate::error::{Error, Result};
use crate::geometry::BoxXywh;
use crate::maskgen::{build_stack, AttentionStack, Detection};
use crate::model::{detector, DetectorKind, FpsNet, ModelConfig};
use crate::nn::Scalar;
use crate::panoptic::LabelSpace;
use crate::pipeline::input_batch;
use crate::FEATURE_STRIDE;

/// Loss values of one optimization step.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StepStats {
    pub l_det: f64,
    pub l_pan: f64,
    pub loss: f64,
    pub matched: usize,
    pub gt_instances: usize,
}

pub struct PreparedTargets {
    pub stacks: Vec<AttentionStack>,
    pub assignments: Vec<MatchAssignment>,
    pub targets: Vec<TargetMap>,
}

/// Attention stacks, matches and order-preserving targets for a batch whose
/// padded input is `padded_hw`.
pub fn prepare_targets(
    samples: &[Sample],
    detections: &[Vec<Detection>],
    shuffle_seeds: &[u64],
    padded_hw: (usize, usize),
    labels: &LabelSpace,
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
) -> Result<PreparedTargets> {
    let (hf, wf) = (padded_hw.0 / FEATURE_STRIDE, padded_hw.1 / FEATURE_STRIDE);
    let mut out = PreparedTargets {
        stacks: Vec::new(),
        assignments: Vec::new(),
        targets: Vec::new(),
    };
    for ((s, dets), &seed) in samples.iter().zip(detections).zip(shuffle_seeds) {
        let stack = build_stack(dets, hf, wf, model_cfg, seed);
        let assignment = match_masks_with(&stack, &s.gt_instances, train_cfg.iou_kind, s.width());
        let gt_feat = s
            .gt_panoptic
            .pad_to(padded_hw.0, padded_hw.1)
            .downsample_nearest(FEATURE_STRIDE);
        let target = build_target(&assignment, &gt_feat, &s.gt_instances, &stack, labels, model_cfg)?;
        out.stacks.push(stack);
        out.assignments.push(assignment);
        out.targets.push(target);
    }
    Ok(out)
}

/// Forward and backward over one batch; gradients are left in the model.
///
/// The attention masks are constants here: nothing flows from the panoptic
/// loss back into the detector. In oracle mode, or with `lambda_det = 0`,
/// the detector head is not touched at all.
pub fn train_step<T: Scalar, R: Rng + ?Sized>(
    model: &mut FpsNet<T>,
    samples: &[Sample],
    labels: &LabelSpace,
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<StepStats> {
    let mc = model.config.clone();
    if labels.num_things() != mc.n_things || labels.num_stuff() != mc.n_stuff {
        return Err(Error::Config("label space does not match the model".into()));
    }
    model.zero_grad();
    let images: Vec<_> = samples.iter().map(|s| &s.image).collect();
    let batch = input_batch::<T>(&images, mc.pad_multiple)?;
    let padded = (batch.dim().1, batch.dim().2);
    let pyramid = model.backbone.forward(&batch, true)?;

    let learned = mc.detector == DetectorKind::Learned;
    let det_out = learned.then(|| model.detector.forward(pyramid.p3()));
    let detections: Vec<Vec<Detection>> = match &det_out {
        // No score threshold at training time: the top n_att boxes are used.
        Some(out) => {
            let decode_cfg = ModelConfig {
                score_threshold: 0.0,
                ..mc.clone()
            };
            (0..samples.len())
                .map(|b| detector::decode(out, b, &decode_cfg, (samples[b].height(), samples[b].width())))
                .collect()
        }
        None => samples
            .iter()
            .map(|s| detector::oracle_detections(&s.gt_instances, cfg.oracle_jitter, cfg.oracle_drop, rng))
            .collect(),
    };
    let seeds: Vec<u64> = samples.iter().map(|_| rng.random()).collect();
    let prep = prepare_targets(samples, &detections, &seeds, padded, labels, &mc, cfg)?;

    let dense = model.fpn.forward(pyramid.p3(), pyramid.p4(), pyramid.p5())?;
    let masks = AttentionStack::batch_tensor::<T>(&prep.stacks);
    let logits = model.head.forward(&dense, &masks, true)?;
    let (l_pan, mut d_logits) = panoptic_loss(&logits.tensor, &prep.targets);
    d_logits.mapv_inplace(|g| g * T::from(cfg.lambda_pan).unwrap());
    let (d_features, _d_masks) = model.head.backward(&d_logits);
    let (mut d3, d4, d5) = model.fpn.backward(&d_features);

    let mut l_det = 0.0;
    if let Some(out) = det_out {
        let gt: Vec<Vec<(u16, BoxXywh)>> = samples
            .iter()
            .map(|s| s.gt_instances.iter().map(|g| (g.class_id, g.bbox)).collect())
            .collect();
        let dl = detection_loss(&out, &gt, mc.anchor_size);
        l_det = dl.total();
        if cfg.lambda_det > 0.0 {
            let w = T::from(cfg.lambda_det).unwrap();
            let d_p3 = model.detector.backward(&dl.d_cls.mapv(|g| g * w), &dl.d_reg.mapv(|g| g * w));
            d3 += &d_p3;
        }
    }
    model.backbone.backward(d3, d4, d5);

    Ok(StepStats {
        l_det,
        l_pan,
        loss: total_loss(l_det, l_pan, cfg),
        matched: prep.assignments.iter().map(|a| a.pairs.len()).sum(),
        gt_instances: samples.iter().map(|s| s.gt_instances.len()).sum(),
    })
}
