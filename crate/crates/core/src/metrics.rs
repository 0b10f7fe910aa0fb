//! Panoptic Quality with the usual void and crowd handling:
//!
//! * a predicted and a ground-truth segment of the same class match when
//!   their IoU exceeds 0.5, where predicted pixels that are void in the
//!   ground truth are left out of the union;
//! * unmatched ground-truth segments are false negatives, crowd regions excepted;
//! * unmatched predicted segments are false positives unless more than half
//!   of their area is ground-truth void or crowd of the same class.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panoptic::{LabelSpace, PanopticLabelMap, VOID_CLASS};

const MATCH_IOU: f64 = 0.5;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassStats {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub iou_sum: f64,
}

impl ClassStats {
    pub fn is_present(&self) -> bool {
        self.tp + self.fp + self.fn_ > 0
    }

    fn denom(&self) -> f64 {
        self.tp as f64 + 0.5 * self.fp as f64 + 0.5 * self.fn_ as f64
    }

    pub fn pq(&self) -> f64 {
        if self.denom() == 0.0 {
            0.0
        } else {
            self.iou_sum / self.denom()
        }
    }

    pub fn sq(&self) -> f64 {
        if self.tp == 0 {
            0.0
        } else {
            self.iou_sum / self.tp as f64
        }
    }

    pub fn rq(&self) -> f64 {
        if self.denom() == 0.0 {
            0.0
        } else {
            self.tp as f64 / self.denom()
        }
    }

    fn add(&mut self, o: &ClassStats) {
        self.tp += o.tp;
        self.fp += o.fp;
        self.fn_ += o.fn_;
        self.iou_sum += o.iou_sum;
    }
}

/// Per-class counts; aggregate metrics are derived on demand.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PqReport {
    pub class_names: Vec<String>,
    pub num_things: usize,
    pub per_class: Vec<ClassStats>,
}

/// Averages over the classes present (any TP, FP or FN).
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PqSummary {
    pub pq: f64,
    pub sq: f64,
    pub rq: f64,
    pub pq_things: f64,
    pub pq_stuff: f64,
    pub num_classes: usize,
}

impl PqReport {
    pub fn empty(labels: &LabelSpace) -> Self {
        Self {
            class_names: (0..labels.num_classes()).map(|c| labels.name(c as u16).to_string()).collect(),
            num_things: labels.num_things(),
            per_class: vec![ClassStats::default(); labels.num_classes()],
        }
    }

    fn mean(&self, classes: impl Iterator<Item = usize>, f: impl Fn(&ClassStats) -> f64) -> (f64, usize) {
        let vals: Vec<f64> = classes
            .filter(|&c| self.per_class[c].is_present())
            .map(|c| f(&self.per_class[c]))
            .collect();
        if vals.is_empty() {
            (0.0, 0)
        } else {
            (vals.iter().sum::<f64>() / vals.len() as f64, vals.len())
        }
    }

    pub fn pq(&self) -> f64 {
        self.mean(0..self.per_class.len(), ClassStats::pq).0
    }

    pub fn sq(&self) -> f64 {
        self.mean(0..self.per_class.len(), ClassStats::sq).0
    }

    pub fn rq(&self) -> f64 {
        self.mean(0..self.per_class.len(), ClassStats::rq).0
    }

    pub fn pq_things(&self) -> f64 {
        self.mean(0..self.num_things, ClassStats::pq).0
    }

    pub fn pq_stuff(&self) -> f64 {
        self.mean(self.num_things..self.per_class.len(), ClassStats::pq).0
    }

    pub fn summary(&self) -> PqSummary {
        PqSummary {
            pq: self.pq(),
            sq: self.sq(),
            rq: self.rq(),
            pq_things: self.pq_things(),
            pq_stuff: self.pq_stuff(),
            num_classes: self.mean(0..self.per_class.len(), ClassStats::pq).1,
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        let classes: Vec<_> = self
            .per_class
            .iter()
            .enumerate()
            .map(|(c, s)| {
                serde_json::json!({
                    "class": self.class_names[c],
                    "isthing": c < self.num_things,
                    "tp": s.tp, "fp": s.fp, "fn": s.fn_, "iou_sum": s.iou_sum,
                    "pq": s.pq(), "sq": s.sq(), "rq": s.rq(),
                })
            })
            .collect();
        serde_json::json!({ "summary": self.summary(), "per_class": classes })
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(&self.to_json()).expect("report serializes");
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

/// Sum per-class statistics. Reports must share a label space.
pub fn aggregate_reports(reports: &[PqReport]) -> Result<PqReport> {
    let Some(first) = reports.first() else {
        return Err(Error::Config("no reports to aggregate".into()));
    };
    let mut out = first.clone();
    for r in &reports[1..] {
        if r.class_names != out.class_names || r.num_things != out.num_things {
            return Err(Error::Config("reports come from different label spaces".into()));
        }
        for (a, b) in out.per_class.iter_mut().zip(&r.per_class) {
            a.add(b);
        }
    }
    Ok(out)
}

#[derive(Default)]
struct Segment {
    class: u16,
    area: u64,
    crowd: bool,
}

pub fn compute_pq(pred: &PanopticLabelMap, gt: &PanopticLabelMap, labels: &LabelSpace) -> Result<PqReport> {
    if (pred.height, pred.width) != (gt.height, gt.width) {
        return Err(Error::Shape(format!(
            "prediction {}x{} vs ground truth {}x{}",
            pred.height, pred.width, gt.height, gt.width
        )));
    }
    let n_classes = labels.num_classes();
    for &c in pred.class.iter().chain(&gt.class) {
        if c != VOID_CLASS && c as usize >= n_classes {
            return Err(Error::GroundTruth(format!("class id {c} outside the label space")));
        }
    }
    let mut pred_segs: BTreeMap<(u16, u32), Segment> = BTreeMap::new();
    let mut gt_segs: BTreeMap<(u16, u32), Segment> = BTreeMap::new();
    // (pred segment, gt key); gt key None is void.
    let mut inter: BTreeMap<((u16, u32), Option<(u16, u32)>), u64> = BTreeMap::new();
    for i in 0..gt.len() {
        let gk = (gt.class[i] != VOID_CLASS).then_some((gt.class[i], gt.instance[i]));
        if let Some(k) = gk {
            let s = gt_segs.entry(k).or_default();
            s.class = k.0;
            s.area += 1;
            s.crowd |= gt.crowd[i];
        }
        if pred.class[i] != VOID_CLASS {
            let pk = (pred.class[i], pred.instance[i]);
            let s = pred_segs.entry(pk).or_default();
            s.class = pk.0;
            s.area += 1;
            *inter.entry((pk, gk)).or_default() += 1;
        }
    }

    let mut report = PqReport::empty(labels);
    let mut pred_matched = BTreeSet::new();
    let mut gt_matched = BTreeSet::new();
    for (&(pk, gk), &n) in &inter {
        let Some(gk) = gk else { continue };
        let (p, g) = (&pred_segs[&pk], &gt_segs[&gk]);
        if g.crowd || p.class != g.class {
            continue;
        }
        let void = inter.get(&(pk, None)).copied().unwrap_or(0);
        let union = p.area + g.area - n - void;
        let iou = n as f64 / union as f64;
        if iou > MATCH_IOU {
            let st = &mut report.per_class[p.class as usize];
            st.tp += 1;
            st.iou_sum += iou;
            pred_matched.insert(pk);
            gt_matched.insert(gk);
        }
    }
    for (gk, g) in &gt_segs {
        if !g.crowd && !gt_matched.contains(gk) {
            report.per_class[g.class as usize].fn_ += 1;
        }
    }
    // Crowd segments of one class are pooled into a single region.
    let crowd_of_class = |pk: (u16, u32)| -> u64 {
        inter
            .iter()
            .filter(|((p, g), _)| *p == pk && g.is_some_and(|g| g.0 == pk.0 && gt_segs[&g].crowd))
            .map(|(_, &n)| n)
            .sum()
    };
    for (pk, p) in &pred_segs {
        if pred_matched.contains(pk) {
            continue;
        }
        let ignored = inter.get(&(*pk, None)).copied().unwrap_or(0) + crowd_of_class(*pk);
        if ignored as f64 / p.area as f64 > 0.5 {
            continue;
        }
        report.per_class[p.class as usize].fp += 1;
    }
    Ok(report)
}

/// Rows of `(name, report)` as a PQ / PQ_Th / PQ_St table, values in percent.
pub fn format_table(rows: &[(String, PqReport)]) -> String {
    let width = rows.iter().map(|r| r.0.len()).max().unwrap_or(0).max(6);
    let mut out = String::new();
    let _ = writeln!(out, "{:<width$} | {:>6} | {:>6} | {:>6} | {:>6} | {:>6}", "Method", "PQ", "PQ_Th", "PQ_St", "SQ", "RQ");
    let _ = writeln!(out, "{}", "-".repeat(width + 45));
    for (name, r) in rows {
        let _ = writeln!(
            out,
            "{:<width$} | {:>6.1} | {:>6.1} | {:>6.1} | {:>6.1} | {:>6.1}",
            name,
            100.0 * r.pq(),
            100.0 * r.pq_things(),
            100.0 * r.pq_stuff(),
            100.0 * r.sq(),
            100.0 * r.rq()
        );
    }
    out
}
