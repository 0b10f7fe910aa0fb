//! Brute-force oracles and random generators shared by the integration and
//! acceptance tests. Deliberately written without reusing library internals.
#![allow(dead_code)]

use std::collections::BTreeMap;

use fpsnet::geometry::BoxXywh;
use fpsnet::maskgen::{AttentionStack, Detection};
use fpsnet::panoptic::{LabelSpace, PanopticLabelMap, VOID_CLASS};
use ndarray::{Array3, ArrayView3};
use rand::Rng;

// ---------------------------------------------------------------- PQ

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct OracleStats {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub iou_sum: f64,
}

/// Pixel-counting PQ: every (pred, gt) segment pair is scored independently.
pub fn brute_force_pq(pred: &PanopticLabelMap, gt: &PanopticLabelMap, n_classes: usize) -> Vec<OracleStats> {
    let key = |m: &PanopticLabelMap, i: usize| (m.class[i] != VOID_CLASS).then_some((m.class[i], m.instance[i]));
    let n = gt.class.len();
    let mut pred_keys: Vec<(u16, u32)> = (0..n).filter_map(|i| key(pred, i)).collect();
    pred_keys.sort();
    pred_keys.dedup();
    let mut gt_keys: Vec<(u16, u32)> = (0..n).filter_map(|i| key(gt, i)).collect();
    gt_keys.sort();
    gt_keys.dedup();
    let gt_is_crowd = |g: (u16, u32)| (0..n).any(|i| key(gt, i) == Some(g) && gt.crowd[i]);

    let mut stats = vec![OracleStats::default(); n_classes];
    let mut pred_hit = vec![false; pred_keys.len()];
    let mut gt_hit = vec![false; gt_keys.len()];
    for (pi, &p) in pred_keys.iter().enumerate() {
        for (gi, &g) in gt_keys.iter().enumerate() {
            if p.0 != g.0 || gt_is_crowd(g) {
                continue;
            }
            let (mut inter, mut union) = (0u64, 0u64);
            for i in 0..n {
                let in_p = key(pred, i) == Some(p);
                let in_g = key(gt, i) == Some(g);
                let gt_void = key(gt, i).is_none();
                if in_p && in_g {
                    inter += 1;
                }
                if in_g || (in_p && !gt_void) {
                    union += 1;
                }
            }
            let iou = inter as f64 / union as f64;
            if iou > 0.5 {
                stats[p.0 as usize].tp += 1;
                stats[p.0 as usize].iou_sum += iou;
                pred_hit[pi] = true;
                gt_hit[gi] = true;
            }
        }
    }
    for (gi, &g) in gt_keys.iter().enumerate() {
        if !gt_hit[gi] && !gt_is_crowd(g) {
            stats[g.0 as usize].fn_ += 1;
        }
    }
    for (pi, &p) in pred_keys.iter().enumerate() {
        if pred_hit[pi] {
            continue;
        }
        let (mut area, mut ignored) = (0u64, 0u64);
        for i in 0..n {
            if key(pred, i) != Some(p) {
                continue;
            }
            area += 1;
            match key(gt, i) {
                None => ignored += 1,
                Some(g) if g.0 == p.0 && gt.crowd[i] => ignored += 1,
                _ => {}
            }
        }
        if ignored * 2 <= area {
            stats[p.0 as usize].fp += 1;
        }
    }
    stats
}

/// Random ground truth made of painted rectangles, plus a prediction that
/// mostly agrees with it. At most `max_segments` segments per map.
pub fn random_map_pair<R: Rng>(
    rng: &mut R,
    height: usize,
    width: usize,
    labels: &LabelSpace,
    max_segments: usize,
) -> (PanopticLabelMap, PanopticLabelMap) {
    let n_classes = labels.num_classes() as u16;
    let paint = |rng: &mut R, m: &mut PanopticLabelMap, class: u16, inst: u32, crowd: bool| {
        let (h, w) = (rng.random_range(2..=height), rng.random_range(2..=width));
        let (y0, x0) = (rng.random_range(0..=height - h), rng.random_range(0..=width - w));
        for y in y0..y0 + h {
            for x in x0..x0 + w {
                m.set(x, y, class, inst);
                m.crowd[y * width + x] = crowd;
            }
        }
    };
    let mut gt = PanopticLabelMap::void(height, width);
    let n_seg = rng.random_range(1..=max_segments);
    for k in 0..n_seg {
        let class = rng.random_range(0..n_classes);
        let thing = labels.is_thing(class);
        let crowd = thing && rng.random_bool(0.15);
        paint(rng, &mut gt, class, if thing && !crowd { k as u32 + 1 } else { 0 }, crowd);
    }
    let mut pred = gt.clone();
    pred.crowd.fill(false);
    let edits = rng.random_range(0..=max_segments.saturating_sub(n_seg).min(3));
    for k in 0..edits {
        if rng.random_bool(0.2) {
            paint(rng, &mut pred, VOID_CLASS, 0, false);
        } else {
            let class = rng.random_range(0..n_classes);
            let inst = if labels.is_thing(class) { 100 + k as u32 } else { 0 };
            paint(rng, &mut pred, class, inst, false);
        }
    }
    pred.crowd.fill(false);
    (pred, gt)
}

// ---------------------------------------------------------------- matching

/// Attention stack whose slots carry the given boxes (None = empty slot);
/// masks are irrelevant to matching and left as a 1x1 zero grid.
pub fn stack_from_boxes(boxes: &[Option<BoxXywh>]) -> AttentionStack {
    AttentionStack {
        masks: Array3::zeros((boxes.len(), 1, 1)),
        permutation: (0..boxes.len()).collect(),
        slot_detections: boxes
            .iter()
            .map(|b| b.map(|bbox| Detection { class_id: 0, score: 1.0, bbox }))
            .collect(),
    }
}

pub fn random_box<R: Rng>(rng: &mut R, extent: f64) -> BoxXywh {
    let w = rng.random_range(2.0..extent / 2.0);
    let h = rng.random_range(2.0..extent / 2.0);
    BoxXywh::new(rng.random_range(w / 2.0..extent - w / 2.0), rng.random_range(h / 2.0..extent - h / 2.0), w, h)
}

pub fn jitter_box<R: Rng>(rng: &mut R, b: &BoxXywh, amount: f64) -> BoxXywh {
    let j = |rng: &mut R| rng.random_range(-amount..=amount);
    BoxXywh::new(b.x_c + j(rng) * b.w, b.y_c + j(rng) * b.h, b.w * (1.0 + j(rng)), b.h * (1.0 + j(rng)))
}

/// A set of GT boxes and slot boxes where slots are a mix of jittered GTs,
/// random boxes and empty slots.
pub fn random_box_set<R: Rng>(rng: &mut R, max_slots: usize, max_gt: usize) -> (Vec<Option<BoxXywh>>, Vec<BoxXywh>) {
    let gts: Vec<BoxXywh> = (0..rng.random_range(0..=max_gt)).map(|_| random_box(rng, 64.0)).collect();
    let slots = (0..rng.random_range(0..=max_slots))
        .map(|_| match rng.random_range(0..4) {
            0 => None,
            1 => Some(random_box(rng, 64.0)),
            _ if gts.is_empty() => Some(random_box(rng, 64.0)),
            _ => {
                let g = gts[rng.random_range(0..gts.len())];
                Some(jitter_box(rng, &g, 0.2))
            }
        })
        .collect();
    (slots, gts)
}

/// Exhaustive matching oracle: among all one-to-one assignments using only
/// pairs with IoU > 0.5, pick the one whose pairs, ranked by (IoU desc, slot,
/// gt) and listed best-first, are lexicographically best (a longer list wins
/// over its own prefix). That is the assignment the greedy rule produces.
pub fn brute_force_matching(iou: &[Vec<f64>], n_gt: usize) -> Vec<(usize, usize)> {
    let mut edges: Vec<(usize, usize, f64)> = Vec::new();
    for (s, row) in iou.iter().enumerate() {
        for (g, &v) in row.iter().enumerate() {
            if v > 0.5 {
                edges.push((s, g, v));
            }
        }
    }
    edges.sort_by(|a, b| b.2.total_cmp(&a.2).then(a.0.cmp(&b.0)).then(a.1.cmp(&b.1)));
    let rank: BTreeMap<(usize, usize), usize> = edges.iter().enumerate().map(|(r, e)| ((e.0, e.1), r)).collect();

    fn better(a: &[usize], b: &[usize]) -> bool {
        for (x, y) in a.iter().zip(b) {
            if x != y {
                return x < y;
            }
        }
        a.len() > b.len()
    }
    fn rec(
        g: usize,
        n_gt: usize,
        n_slots: usize,
        rank: &BTreeMap<(usize, usize), usize>,
        used: &mut Vec<bool>,
        cur: &mut Vec<(usize, usize)>,
        best: &mut (Vec<usize>, Vec<(usize, usize)>),
    ) {
        if g == n_gt {
            let mut r: Vec<usize> = cur.iter().map(|p| rank[p]).collect();
            r.sort();
            if better(&r, &best.0) {
                *best = (r, cur.clone());
            }
            return;
        }
        rec(g + 1, n_gt, n_slots, rank, used, cur, best);
        for s in 0..n_slots {
            if !used[s] && rank.contains_key(&(s, g)) {
                used[s] = true;
                cur.push((s, g));
                rec(g + 1, n_gt, n_slots, rank, used, cur, best);
                cur.pop();
                used[s] = false;
            }
        }
    }
    let mut best = (Vec::new(), Vec::new());
    rec(0, n_gt, iou.len(), &rank, &mut vec![false; iou.len()], &mut Vec::new(), &mut best);
    let mut pairs = best.1;
    pairs.sort();
    pairs
}

// ---------------------------------------------------------------- fusion

/// Upsample `[Hf, Wf, C]` by 8 with half-pixel-centre bilinear interpolation
/// (edge-clamped), crop to `hw`, then scan all channels per pixel, skipping
/// empty slots; the first maximum wins.
pub fn brute_force_fuse(
    logits: ArrayView3<'_, f64>,
    stack: &AttentionStack,
    labels: &LabelSpace,
    hw: (usize, usize),
) -> PanopticLabelMap {
    let (hf, wf, c) = logits.dim();
    let n_att = stack.n_att();
    let coord = |o: usize, n_in: usize| -> (usize, usize, f64) {
        let src = ((o as f64 + 0.5) / 8.0 - 0.5).max(0.0);
        let i0 = (src.floor() as usize).min(n_in - 1);
        let i1 = (i0 + 1).min(n_in - 1);
        (i0, i1, if i0 == i1 { 0.0 } else { src - i0 as f64 })
    };
    let mut map = PanopticLabelMap::void(hw.0, hw.1);
    for y in 0..hw.0 {
        let (y0, y1, fy) = coord(y, hf);
        for x in 0..hw.1 {
            let (x0, x1, fx) = coord(x, wf);
            let mut best: Option<(usize, f64)> = None;
            for k in 0..c {
                if k < n_att && stack.slot_detections[k].is_none() {
                    continue;
                }
                let v = (1.0 - fy) * (1.0 - fx) * logits[[y0, x0, k]]
                    + (1.0 - fy) * fx * logits[[y0, x1, k]]
                    + fy * (1.0 - fx) * logits[[y1, x0, k]]
                    + fy * fx * logits[[y1, x1, k]];
                if best.is_none_or(|(_, b)| v > b) {
                    best = Some((k, v));
                }
            }
            let k = best.unwrap().0;
            let (class, inst) = if k < n_att {
                (stack.slot_detections[k].unwrap().class_id, k as u32 + 1)
            } else if k - n_att < labels.num_stuff() {
                ((labels.num_things() + k - n_att) as u16, 0)
            } else {
                (VOID_CLASS, 0)
            };
            map.set(x, y, class, inst);
        }
    }
    map
}

/// Random logits and a stack with some empty slots. Empty slots get boosted
/// logits so that suppressing them changes the argmax.
pub fn random_fusion_case<R: Rng>(
    rng: &mut R,
    labels: &LabelSpace,
    n_att: usize,
) -> (Array3<f64>, AttentionStack, (usize, usize)) {
    let (hf, wf) = (rng.random_range(1..=4), rng.random_range(1..=4));
    let c = n_att + labels.num_stuff() + 2;
    let boxes: Vec<Option<BoxXywh>> = (0..n_att)
        .map(|_| rng.random_bool(0.6).then(|| random_box(rng, 32.0)))
        .collect();
    let mut stack = stack_from_boxes(&boxes);
    for d in stack.slot_detections.iter_mut().flatten() {
        d.class_id = rng.random_range(0..labels.num_things() as u16);
    }
    let logits = Array3::from_shape_fn((hf, wf, c), |(_, _, k)| {
        let boost = if k < n_att && boxes[k].is_none() { 2.0 } else { 0.0 };
        rng.random_range(-3.0..3.0) + boost
    });
    let hw = (rng.random_range(8 * hf - 7..=8 * hf), rng.random_range(8 * wf - 7..=8 * wf));
    (logits, stack, hw)
}

// ---------------------------------------------------------------- label maps

/// Random panoptic map for encode/decode tests: things with distinct
/// instance ids, stuff, void and the odd crowd region.
pub fn random_label_map<R: Rng>(rng: &mut R, height: usize, width: usize, labels: &LabelSpace) -> PanopticLabelMap {
    let mut m = PanopticLabelMap::void(height, width);
    for k in 0..rng.random_range(0..10) {
        let class = rng.random_range(0..labels.num_classes() as u16);
        let thing = labels.is_thing(class);
        let crowd = thing && rng.random_bool(0.1);
        let inst = if thing && !crowd { rng.random_range(1..1000) * 10 + k } else { 0 };
        let (h, w) = (rng.random_range(1..=height), rng.random_range(1..=width));
        let (y0, x0) = (rng.random_range(0..=height - h), rng.random_range(0..=width - w));
        for y in y0..y0 + h {
            for x in x0..x0 + w {
                m.set(x, y, class, inst);
                m.crowd[y * width + x] = crowd;
            }
        }
    }
    m
}
