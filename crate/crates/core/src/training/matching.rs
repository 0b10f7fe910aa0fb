use serde::{Deserialize, Serialize};

use crate::geometry::BoxXywh;
use crate::maskgen::AttentionStack;
use crate::panoptic::GroundTruthInstance;

/// Minimum IoU (exclusive) for a slot to be paired with a ground-truth instance.
pub const MATCH_IOU: f64 = 0.5;

/// How slot boxes are compared with ground-truth instances.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IouKind {
    /// Slot box vs. the instance's tight box.
    #[default]
    Box,
    /// Slot box (as a pixel set) vs. the instance's pixel mask.
    Mask,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MatchAssignment {
    /// `(slot, gt index, iou)`, in the order they were assigned.
    pub pairs: Vec<(usize, usize, f64)>,
    pub unmatched_gt: Vec<usize>,
    /// Occupied slots that ended up without a partner.
    pub discarded_slots: Vec<usize>,
}

impl MatchAssignment {
    pub fn slot_for_gt(&self, gt: usize) -> Option<usize> {
        self.pairs.iter().find(|p| p.1 == gt).map(|p| p.0)
    }
}

/// Greedy one-to-one assignment over an `iou[slot][gt]` table: candidate pairs
/// above the threshold are taken in descending IoU order, ties broken by
/// lower slot index then lower gt index.
pub fn greedy_assign(iou: &[Vec<f64>], n_gt: usize) -> Vec<(usize, usize, f64)> {
    let mut cands: Vec<(usize, usize, f64)> = iou
        .iter()
        .enumerate()
        .flat_map(|(s, row)| row.iter().enumerate().map(move |(g, &v)| (s, g, v)))
        .filter(|&(_, _, v)| v > MATCH_IOU)
        .collect();
    cands.sort_by(|a, b| b.2.total_cmp(&a.2).then(a.0.cmp(&b.0)).then(a.1.cmp(&b.1)));
    let mut slot_used = vec![false; iou.len()];
    let mut gt_used = vec![false; n_gt];
    let mut pairs = Vec::new();
    for (s, g, v) in cands {
        if !slot_used[s] && !gt_used[g] {
            slot_used[s] = true;
            gt_used[g] = true;
            pairs.push((s, g, v));
        }
    }
    pairs
}

fn box_mask_iou(b: &BoxXywh, inst: &GroundTruthInstance, width: usize) -> f64 {
    let height = inst.mask.len() / width.max(1);
    let (x0, y0, x1, y1) = b.corners();
    // Pixels whose centres fall inside the box.
    let px0 = (x0 - 0.5).ceil().max(0.0) as usize;
    let py0 = (y0 - 0.5).ceil().max(0.0) as usize;
    let px1 = ((x1 - 0.5).ceil().max(0.0) as usize).min(width);
    let py1 = ((y1 - 0.5).ceil().max(0.0) as usize).min(height);
    let box_area = px1.saturating_sub(px0) * py1.saturating_sub(py0);
    let mut inter = 0usize;
    for y in py0..py1 {
        for x in px0..px1 {
            if inst.mask[y * width + x] {
                inter += 1;
            }
        }
    }
    let union = box_area + inst.area() - inter;
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// IoU table `[slot][gt]`; empty slots get an all-zero row.
pub fn iou_table(
    stack: &AttentionStack,
    gt: &[GroundTruthInstance],
    kind: IouKind,
    image_width: usize,
) -> Vec<Vec<f64>> {
    stack
        .slot_detections
        .iter()
        .map(|d| match d {
            None => vec![0.0; gt.len()],
            Some(d) => gt
                .iter()
                .map(|g| match kind {
                    IouKind::Box => d.bbox.iou(&g.bbox),
                    IouKind::Mask => box_mask_iou(&d.bbox, g, image_width),
                })
                .collect(),
        })
        .collect()
}

/// Pair attention slots with ground-truth things by box IoU.
pub fn match_masks(stack: &AttentionStack, gt: &[GroundTruthInstance]) -> MatchAssignment {
    match_masks_with(stack, gt, IouKind::Box, 0)
}

pub fn match_masks_with(
    stack: &AttentionStack,
    gt: &[GroundTruthInstance],
    kind: IouKind,
    image_width: usize,
) -> MatchAssignment {
    let table = iou_table(stack, gt, kind, image_width);
    let pairs = greedy_assign(&table, gt.len());
    let unmatched_gt = (0..gt.len())
        .filter(|g| !pairs.iter().any(|p| p.1 == *g))
        .collect();
    let discarded_slots = stack
        .occupied_slots()
        .map(|(s, _)| s)
        .filter(|s| !pairs.iter().any(|p| p.0 == *s))
        .collect();
    MatchAssignment {
        pairs,
        unmatched_gt,
        discarded_slots,
    }
}
