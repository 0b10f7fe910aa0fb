//! Turning detections into the stack of attention masks fed to the panoptic head.
//!
//! Boxes live in input-image pixels; masks live on the stride-8 feature grid.
//! Feature pixel `(j, i)` has its centre at `((j + 0.5) * 8, (i + 0.5) * 8)` in
//! image coordinates.

use std::path::Path;

use ndarray::{s, Array3, Array4};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::BoxXywh;
use crate::model::{MaskKind, ModelConfig, SigmaMode};
use crate::nn::Scalar;
use crate::FEATURE_STRIDE;

/// A scored, classed box from a detector or the oracle.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub class_id: u16,
    pub score: f64,
    pub bbox: BoxXywh,
}

/// `n_att` masks on the feature grid plus the slot bookkeeping.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionStack {
    /// `[n_att, H, W]`, values in `[0, c_att]`.
    pub masks: Array3<f64>,
    /// `permutation[slot]` is the slot index before shuffling.
    pub permutation: Vec<usize>,
    /// Detection rendered into each slot; `None` for all-zero slots.
    pub slot_detections: Vec<Option<Detection>>,
}

impl AttentionStack {
    pub fn n_att(&self) -> usize {
        self.slot_detections.len()
    }

    pub fn height(&self) -> usize {
        self.masks.dim().1
    }

    pub fn width(&self) -> usize {
        self.masks.dim().2
    }

    pub fn is_empty_slot(&self, slot: usize) -> bool {
        self.slot_detections[slot].is_none()
    }

    pub fn occupied_slots(&self) -> impl Iterator<Item = (usize, &Detection)> {
        self.slot_detections
            .iter()
            .enumerate()
            .filter_map(|(s, d)| d.as_ref().map(|d| (s, d)))
    }

    /// Undo every shuffle applied so far.
    pub fn unshuffle(&self) -> AttentionStack {
        let n = self.n_att();
        let mut masks = Array3::zeros(self.masks.raw_dim());
        let mut dets = vec![None; n];
        for (slot, &orig) in self.permutation.iter().enumerate() {
            masks
                .slice_mut(s![orig, .., ..])
                .assign(&self.masks.slice(s![slot, .., ..]));
            dets[orig] = self.slot_detections[slot];
        }
        AttentionStack {
            masks,
            permutation: (0..n).collect(),
            slot_detections: dets,
        }
    }

    /// `[H, W, n_att]` tensor in the head's element type.
    pub fn to_hwc<T: Scalar>(&self) -> ndarray::Array3<T> {
        self.masks
            .view()
            .permuted_axes([1, 2, 0])
            .mapv(|v| T::from(v).unwrap())
    }

    /// Stack a batch into `[N, H, W, n_att]`.
    pub fn batch_tensor<T: Scalar>(stacks: &[AttentionStack]) -> Array4<T> {
        let (h, w, n_att) = (stacks[0].height(), stacks[0].width(), stacks[0].n_att());
        let mut out = Array4::zeros((stacks.len(), h, w, n_att));
        for (b, st) in stacks.iter().enumerate() {
            out.slice_mut(s![b, .., .., ..]).assign(&st.to_hwc::<T>());
        }
        out
    }

    /// Write each slot as an 8-bit grayscale PNG (`slot_XX.png`), scaled so
    /// `c_att` maps to 255.
    pub fn write_images(&self, dir: &Path, c_att: f64) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for slot in 0..self.n_att() {
            let m = self.masks.slice(s![slot, .., ..]);
            let (h, w) = m.dim();
            let img = image::GrayImage::from_fn(w as u32, h as u32, |x, y| {
                let v = m[[y as usize, x as usize]] / c_att * 255.0;
                image::Luma([v.round().clamp(0.0, 255.0) as u8])
            });
            let path = dir.join(format!("slot_{slot:02}.png"));
            img.save(&path)
                .map_err(|source| Error::Image { path, source })?;
        }
        Ok(())
    }
}

/// Feature-grid cell range `[x0, x1) x [y0, y1)` covered by a box after
/// clipping to the padded image and rounding outward.
pub fn rasterize_box(bbox: &BoxXywh, height: usize, width: usize) -> Option<(usize, usize, usize, usize)> {
    let stride = FEATURE_STRIDE as f64;
    let clipped = bbox.clip(width as f64 * stride, height as f64 * stride)?;
    let (x0, y0, x1, y1) = clipped.corners();
    let fx0 = (x0 / stride).floor().max(0.0) as usize;
    let fy0 = (y0 / stride).floor().max(0.0) as usize;
    let fx1 = ((x1 / stride).ceil() as usize).min(width);
    let fy1 = ((y1 / stride).ceil() as usize).min(height);
    (fx1 > fx0 && fy1 > fy0).then_some((fx0, fy0, fx1, fy1))
}

/// Standard deviations of the Gaussian in feature-grid pixels.
pub fn gaussian_sigmas(bbox: &BoxXywh, mode: SigmaMode) -> (f64, f64) {
    let stride = FEATURE_STRIDE as f64;
    match mode {
        SigmaMode::StdDev => (bbox.w / 4.0 / stride, bbox.h / 4.0 / stride),
        SigmaMode::Variance => ((bbox.w / 4.0).sqrt() / stride, (bbox.h / 4.0).sqrt() / stride),
    }
}

fn select(detections: &[Detection], n_att: usize) -> Vec<Detection> {
    let mut sorted = detections.to_vec();
    sorted.sort_by(|a, b| b.score.total_cmp(&a.score));
    sorted.truncate(n_att);
    sorted
}

fn render(
    detections: &[Detection],
    height: usize,
    width: usize,
    config: &ModelConfig,
    kind: MaskKind,
) -> AttentionStack {
    let n_att = config.n_att;
    let mut masks = Array3::zeros((n_att, height, width));
    let mut slot_detections = vec![None; n_att];
    let stride = FEATURE_STRIDE as f64;
    for (slot, det) in select(detections, n_att).into_iter().enumerate() {
        let Some((x0, y0, x1, y1)) = rasterize_box(&det.bbox, height, width) else {
            log::warn!(
                "detection {:?} covers no feature cell at stride {FEATURE_STRIDE}; slot {slot} left empty",
                det.bbox
            );
            continue;
        };
        let mut m = masks.slice_mut(s![slot, .., ..]);
        match kind {
            MaskKind::Hard => {
                m.slice_mut(s![y0..y1, x0..x1]).fill(config.c_att);
            }
            MaskKind::Soft => {
                let (sx, sy) = gaussian_sigmas(&det.bbox, config.sigma_mode);
                let (cx, cy) = (det.bbox.x_c / stride, det.bbox.y_c / stride);
                let mut peak = 0.0f64;
                for y in y0..y1 {
                    let dy = y as f64 + 0.5 - cy;
                    for x in x0..x1 {
                        let dx = x as f64 + 0.5 - cx;
                        let g = (-(dx * dx / (2.0 * sx * sx) + dy * dy / (2.0 * sy * sy))).exp();
                        m[[y, x]] = g;
                        peak = peak.max(g);
                    }
                }
                if peak > 0.0 {
                    m.mapv_inplace(|v| v / peak * config.c_att);
                } else {
                    log::warn!("gaussian underflowed for {:?}; slot {slot} left empty", det.bbox);
                    continue;
                }
            }
        }
        slot_detections[slot] = Some(det);
    }
    AttentionStack {
        masks,
        permutation: (0..n_att).collect(),
        slot_detections,
    }
}

/// Unshuffled stack of masks for the `n_att` highest-scoring detections,
/// filled according to `config.mask_kind`.
pub fn generate_masks(
    detections: &[Detection],
    height: usize,
    width: usize,
    config: &ModelConfig,
) -> AttentionStack {
    render(detections, height, width, config, config.mask_kind)
}

/// Like [`generate_masks`] but every in-box cell is `c_att`.
pub fn make_hard_masks(
    detections: &[Detection],
    height: usize,
    width: usize,
    config: &ModelConfig,
) -> AttentionStack {
    render(detections, height, width, config, MaskKind::Hard)
}

/// Seeded Fisher-Yates permutation of the slots, applied jointly to masks,
/// the permutation record and the slot detections.
pub fn shuffle_masks(stack: &AttentionStack, rng_seed: u64) -> AttentionStack {
    let n = stack.n_att();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(rng_seed));
    let mut masks = Array3::zeros(stack.masks.raw_dim());
    for (new, &old) in order.iter().enumerate() {
        masks
            .slice_mut(s![new, .., ..])
            .assign(&stack.masks.slice(s![old, .., ..]));
    }
    AttentionStack {
        masks,
        permutation: order.iter().map(|&o| stack.permutation[o]).collect(),
        slot_detections: order.iter().map(|&o| stack.slot_detections[o]).collect(),
    }
}

/// Masks for one image, shuffled when the config asks for it.
pub fn build_stack(
    detections: &[Detection],
    height: usize,
    width: usize,
    config: &ModelConfig,
    shuffle_seed: u64,
) -> AttentionStack {
    let stack = generate_masks(detections, height, width, config);
    if config.shuffle {
        shuffle_masks(&stack, shuffle_seed)
    } else {
        stack
    }
}
