use ndarray::Array4;

use crate::geometry::BoxXywh;
use crate::model::detector::{anchors, encode_box, DetectorOutput, ANCHORS_PER_CELL};
use crate::nn::Scalar;

pub const FOCAL_ALPHA: f64 = 0.25;
pub const FOCAL_GAMMA: f64 = 2.0;
pub const POSITIVE_IOU: f64 = 0.5;
pub const NEGATIVE_IOU: f64 = 0.4;
const SMOOTH_L1_BETA: f64 = 1.0 / 9.0;

/// Per-anchor training label.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AnchorLabel {
    Negative,
    Ignore,
    /// Index of the ground-truth box.
    Positive(usize),
}

/// IoU >= 0.5 with the best box is positive, < 0.4 negative, otherwise ignored.
pub fn assign_anchors(anchors: &[BoxXywh], gt: &[BoxXywh]) -> Vec<AnchorLabel> {
    anchors
        .iter()
        .map(|a| {
            let best = gt
                .iter()
                .enumerate()
                .map(|(i, g)| (i, a.iou(g)))
                .fold(None::<(usize, f64)>, |acc, (i, v)| match acc {
                    Some((_, bv)) if bv >= v => acc,
                    _ => Some((i, v)),
                });
            match best {
                Some((i, v)) if v >= POSITIVE_IOU => AnchorLabel::Positive(i),
                Some((_, v)) if v >= NEGATIVE_IOU => AnchorLabel::Ignore,
                _ => AnchorLabel::Negative,
            }
        })
        .collect()
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Sigmoid focal loss of one logit and its derivative.
pub fn focal(x: f64, positive: bool) -> (f64, f64) {
    let p = sigmoid(x);
    if positive {
        let log_p = -softplus(-x);
        let w = (1.0 - p).powf(FOCAL_GAMMA);
        (
            -FOCAL_ALPHA * w * log_p,
            FOCAL_ALPHA * w * (FOCAL_GAMMA * p * log_p - (1.0 - p)),
        )
    } else {
        let log_1mp = -softplus(x);
        let w = p.powf(FOCAL_GAMMA);
        (
            -(1.0 - FOCAL_ALPHA) * w * log_1mp,
            (1.0 - FOCAL_ALPHA) * w * (p - FOCAL_GAMMA * (1.0 - p) * log_1mp),
        )
    }
}

fn smooth_l1(d: f64) -> (f64, f64) {
    if d.abs() < SMOOTH_L1_BETA {
        (0.5 * d * d / SMOOTH_L1_BETA, d / SMOOTH_L1_BETA)
    } else {
        (d.abs() - 0.5 * SMOOTH_L1_BETA, d.signum())
    }
}

/// Loss terms of the detector over a batch.
#[derive(Clone, Debug)]
pub struct DetectionLoss<T> {
    pub classification: f64,
    pub regression: f64,
    pub d_cls: Array4<T>,
    pub d_reg: Array4<T>,
}

impl<T> DetectionLoss<T> {
    pub fn total(&self) -> f64 {
        self.classification + self.regression
    }
}

/// Focal classification loss plus smooth-L1 box regression on positives,
/// both normalized by the number of positive anchors (at least one).
/// `gt[b]` lists `(class, box)` for batch element `b`.
pub fn detection_loss<T: Scalar>(
    out: &DetectorOutput<T>,
    gt: &[Vec<(u16, BoxXywh)>],
    anchor_size: f64,
) -> DetectionLoss<T> {
    let (n, h, w, ct) = out.cls.dim();
    let n_things = ct / ANCHORS_PER_CELL;
    let grid = anchors(h, w, anchor_size);
    let mut d_cls = Array4::<T>::zeros(out.cls.dim());
    let mut d_reg = Array4::<T>::zeros(out.reg.dim());
    let labels: Vec<Vec<AnchorLabel>> = gt
        .iter()
        .map(|g| assign_anchors(&grid, &g.iter().map(|x| x.1).collect::<Vec<_>>()))
        .collect();
    let num_pos = labels
        .iter()
        .flatten()
        .filter(|l| matches!(l, AnchorLabel::Positive(_)))
        .count();
    let norm = num_pos.max(1) as f64;
    let mut cls_loss = 0.0;
    let mut reg_loss = 0.0;
    for b in 0..n {
        for y in 0..h {
            for x in 0..w {
                for a in 0..ANCHORS_PER_CELL {
                    let idx = (y * w + x) * ANCHORS_PER_CELL + a;
                    let label = labels[b][idx];
                    if label == AnchorLabel::Ignore {
                        continue;
                    }
                    let pos_class = match label {
                        AnchorLabel::Positive(g) => Some(gt[b][g].0 as usize),
                        _ => None,
                    };
                    for c in 0..n_things {
                        let ch = a * n_things + c;
                        let logit = out.cls[[b, y, x, ch]].to_f64().unwrap();
                        let (l, d) = focal(logit, pos_class == Some(c));
                        cls_loss += l;
                        d_cls[[b, y, x, ch]] = T::from(d / norm).unwrap();
                    }
                    if let AnchorLabel::Positive(g) = label {
                        let t = encode_box(&grid[idx], &gt[b][g].1);
                        for k in 0..4 {
                            let pred = out.reg[[b, y, x, a * 4 + k]].to_f64().unwrap();
                            let (l, d) = smooth_l1(pred - t[k]);
                            reg_loss += l;
                            d_reg[[b, y, x, a * 4 + k]] = T::from(d / norm).unwrap();
                        }
                    }
                }
            }
        }
    }
    DetectionLoss {
        classification: cls_loss / norm,
        regression: reg_loss / norm,
        d_cls,
        d_reg,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn focal_derivative_matches_finite_differences() {
        for &x in &[-3.0, -0.2, 0.0, 0.7, 4.0] {
            for pos in [true, false] {
                let h = 1e-6;
                let num = (focal(x + h, pos).0 - focal(x - h, pos).0) / (2.0 * h);
                assert!((num - focal(x, pos).1).abs() < 1e-8, "x={x} pos={pos}");
            }
        }
    }

    #[test]
    fn all_background_has_no_box_term() {
        let out = DetectorOutput {
            cls: Array4::<f64>::zeros((1, 4, 4, 9 * 2)),
            reg: Array4::<f64>::from_elem((1, 4, 4, 36), 0.3),
        };
        let l = detection_loss(&out, &[vec![]], 32.0);
        assert_eq!(l.regression, 0.0);
        assert!(l.d_reg.iter().all(|&g| g == 0.0));
        assert!(l.classification > 0.0);
    }

    #[test]
    fn perfect_predictions_have_near_zero_loss() {
        let (h, w, nt) = (4, 4, 2);
        let grid = anchors(h, w, 16.0);
        let gt = vec![(1u16, grid[5 * 9 + 4])];
        let labels = assign_anchors(&grid, &[gt[0].1]);
        let mut cls = Array4::<f64>::from_elem((1, h, w, 9 * nt), -30.0);
        let mut reg = Array4::<f64>::zeros((1, h, w, 36));
        for (idx, l) in labels.iter().enumerate() {
            let (y, x, a) = (idx / 9 / w, (idx / 9) % w, idx % 9);
            match l {
                AnchorLabel::Positive(g) => {
                    cls[[0, y, x, a * nt + 1]] = 30.0;
                    let t = encode_box(&grid[idx], &gt[*g].1);
                    for k in 0..4 {
                        reg[[0, y, x, a * 4 + k]] = t[k];
                    }
                }
                _ => {}
            }
        }
        let l = detection_loss(&DetectorOutput { cls, reg }, &[gt], 16.0);
        assert!(l.total() < 1e-9, "{}", l.total());
    }

    #[test]
    fn anchor_thresholds() {
        let a = vec![
            BoxXywh::from_corners(0.0, 0.0, 10.0, 10.0),
            BoxXywh::from_corners(0.0, 0.0, 10.0, 4.5),
            BoxXywh::from_corners(0.0, 0.0, 10.0, 3.0),
        ];
        let g = [BoxXywh::from_corners(0.0, 0.0, 10.0, 10.0)];
        assert_eq!(
            assign_anchors(&a, &g),
            vec![AnchorLabel::Positive(0), AnchorLabel::Ignore, AnchorLabel::Negative]
        );
    }
}
