//! Single-scale anchor detector on P3 and the ground-truth oracle detector.

use ndarray::{Array4, ArrayD, IxDyn};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::ModelConfig;
use crate::geometry::BoxXywh;
use crate::maskgen::Detection;
use crate::nn::{Conv2d, Relu, Scalar, Visitor};
use crate::panoptic::GroundTruthInstance;
use crate::FEATURE_STRIDE;

pub const ANCHOR_SCALES: [f64; 3] = [1.0, 1.259_921_049_894_873_2, 1.587_401_051_968_199_4];
/// Height / width.
pub const ANCHOR_RATIOS: [f64; 3] = [0.5, 1.0, 2.0];
pub const ANCHORS_PER_CELL: usize = 9;

const PRIOR_PROBABILITY: f64 = 0.01;
const MAX_LOG_SCALE: f64 = 4.135_166_556_742_356; // ln(1000 / 16)
const PRE_NMS_TOP_K: usize = 1000;

/// Raw head outputs on the P3 grid.
#[derive(Clone, Debug)]
pub struct DetectorOutput<T> {
    /// `[N, H, W, A * n_things]` classification logits.
    pub cls: Array4<T>,
    /// `[N, H, W, A * 4]` box deltas `(dx, dy, dw, dh)`.
    pub reg: Array4<T>,
}

#[derive(Clone, Debug)]
pub struct DetectorHead<T> {
    tower: Conv2d<T>,
    tower_relu: Relu<T>,
    cls: Conv2d<T>,
    reg: Conv2d<T>,
    n_things: usize,
}

impl<T: Scalar> DetectorHead<T> {
    pub fn new<R: Rng + ?Sized>(cfg: &ModelConfig, rng: &mut R) -> Self {
        let f = cfg.f_dim;
        let mut cls = Conv2d::new(f, ANCHORS_PER_CELL * cfg.n_things, 3, 1, cfg.init_std, rng);
        let prior = -((1.0 - PRIOR_PROBABILITY) / PRIOR_PROBABILITY).ln();
        cls.bias.value = ArrayD::from_elem(IxDyn(&[ANCHORS_PER_CELL * cfg.n_things]), T::from(prior).unwrap());
        Self {
            tower: Conv2d::new(f, f, 3, 1, cfg.init_std, rng),
            tower_relu: Relu::new(),
            cls,
            reg: Conv2d::new(f, ANCHORS_PER_CELL * 4, 3, 1, cfg.init_std, rng),
            n_things: cfg.n_things,
        }
    }

    pub fn n_things(&self) -> usize {
        self.n_things
    }

    pub fn forward(&mut self, p3: &Array4<T>) -> DetectorOutput<T> {
        let t = self.tower_relu.forward(self.tower.forward(p3));
        DetectorOutput {
            cls: self.cls.forward(&t),
            reg: self.reg.forward(&t),
        }
    }

    /// Returns the gradient w.r.t. P3.
    pub fn backward(&mut self, d_cls: &Array4<T>, d_reg: &Array4<T>) -> Array4<T> {
        let d = self.cls.backward(d_cls) + self.reg.backward(d_reg);
        self.tower.backward(&self.tower_relu.backward(d))
    }

    pub fn visit(&mut self, prefix: &str, f: &mut Visitor<'_, T>) {
        self.tower.visit(&format!("{prefix}.tower"), f);
        self.cls.visit(&format!("{prefix}.cls"), f);
        self.reg.visit(&format!("{prefix}.reg"), f);
    }
}

/// Anchors for a `height x width` P3 grid, ordered `(y, x, anchor)`.
pub fn anchors(height: usize, width: usize, base: f64) -> Vec<BoxXywh> {
    let stride = FEATURE_STRIDE as f64;
    let mut out = Vec::with_capacity(height * width * ANCHORS_PER_CELL);
    for y in 0..height {
        for x in 0..width {
            let (cx, cy) = ((x as f64 + 0.5) * stride, (y as f64 + 0.5) * stride);
            for &scale in &ANCHOR_SCALES {
                for &ratio in &ANCHOR_RATIOS {
                    let side = base * scale;
                    out.push(BoxXywh::new(cx, cy, side / ratio.sqrt(), side * ratio.sqrt()));
                }
            }
        }
    }
    out
}

/// Regression targets of `target` relative to `anchor`.
pub fn encode_box(anchor: &BoxXywh, target: &BoxXywh) -> [f64; 4] {
    [
        (target.x_c - anchor.x_c) / anchor.w,
        (target.y_c - anchor.y_c) / anchor.h,
        (target.w / anchor.w).ln(),
        (target.h / anchor.h).ln(),
    ]
}

pub fn decode_box(anchor: &BoxXywh, d: [f64; 4]) -> BoxXywh {
    BoxXywh::new(
        anchor.x_c + d[0] * anchor.w,
        anchor.y_c + d[1] * anchor.h,
        anchor.w * d[2].min(MAX_LOG_SCALE).exp(),
        anchor.h * d[3].min(MAX_LOG_SCALE).exp(),
    )
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Greedy per-class non-maximum suppression; input must be sorted by score.
pub fn nms(sorted: &[Detection], iou_threshold: f64) -> Vec<Detection> {
    let mut keep: Vec<Detection> = Vec::new();
    for d in sorted {
        if keep
            .iter()
            .all(|k| k.class_id != d.class_id || k.bbox.iou(&d.bbox) <= iou_threshold)
        {
            keep.push(*d);
        }
    }
    keep
}

/// Turn raw outputs for batch element `b` into detections, sorted by
/// descending score. `image_hw` is the unpadded image size used for clipping.
pub fn decode<T: Scalar>(
    out: &DetectorOutput<T>,
    b: usize,
    cfg: &ModelConfig,
    image_hw: (usize, usize),
) -> Vec<Detection> {
    let (_, h, w, _) = out.cls.dim();
    let n_things = cfg.n_things;
    let anchors = anchors(h, w, cfg.anchor_size);
    let mut cands = Vec::new();
    for y in 0..h {
        for x in 0..w {
            for a in 0..ANCHORS_PER_CELL {
                let idx = (y * w + x) * ANCHORS_PER_CELL + a;
                for c in 0..n_things {
                    let logit = out.cls[[b, y, x, a * n_things + c]].to_f64().unwrap();
                    let score = sigmoid(logit);
                    if score > cfg.score_threshold && score > 0.0 {
                        cands.push((score, idx, c));
                    }
                }
            }
        }
    }
    cands.sort_by(|p, q| q.0.total_cmp(&p.0).then(p.1.cmp(&q.1)).then(p.2.cmp(&q.2)));
    cands.truncate(PRE_NMS_TOP_K);
    let dets: Vec<Detection> = cands
        .into_iter()
        .filter_map(|(score, idx, c)| {
            let (y, x, a) = (idx / ANCHORS_PER_CELL / w, (idx / ANCHORS_PER_CELL) % w, idx % ANCHORS_PER_CELL);
            let d = [0, 1, 2, 3].map(|k| out.reg[[b, y, x, a * 4 + k]].to_f64().unwrap());
            let bbox = decode_box(&anchors[idx], d).clip(image_hw.1 as f64, image_hw.0 as f64)?;
            Some(Detection {
                class_id: c as u16,
                score,
                bbox,
            })
        })
        .collect();
    let mut kept = nms(&dets, cfg.nms_iou);
    kept.truncate(cfg.max_detections);
    kept
}

/// Ground-truth boxes as detections with score 1. Centres move by
/// `N(0, jitter * size)` and sizes scale by `exp(N(0, jitter))`; each box is
/// dropped with probability `drop_rate`.
pub fn oracle_detections<R: Rng + ?Sized>(
    gt: &[GroundTruthInstance],
    jitter: f64,
    drop_rate: f64,
    rng: &mut R,
) -> Vec<Detection> {
    let mut out = Vec::with_capacity(gt.len());
    for inst in gt {
        if drop_rate > 0.0 && rng.random::<f64>() < drop_rate {
            continue;
        }
        let mut b = inst.bbox;
        if jitter > 0.0 {
            let n = Normal::new(0.0, jitter).unwrap();
            b.x_c += n.sample(rng) * b.w;
            b.y_c += n.sample(rng) * b.h;
            b.w *= n.sample(rng).exp();
            b.h *= n.sample(rng).exp();
        }
        out.push(Detection {
            class_id: inst.class_id,
            score: 1.0,
            bbox: b,
        });
    }
    out
}
