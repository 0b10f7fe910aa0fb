use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::matching::match_masks;
use super::optim::{poly_lr, Sgd};
use super::step::{train_step, StepStats};
use super::TrainConfig;
use crate::data::{augment, Dataset};
use crate::error::{Error, Result};
use crate::metrics::PqReport;
use crate::model::{checkpoint, FpsNet};
use crate::pipeline::{evaluate, for_each_prediction};

/// One line of `metrics.jsonl`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub step: usize,
    pub l_det: f64,
    pub l_pan: f64,
    pub loss: f64,
    pub lr: f64,
    pub val_pq: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub records: Vec<MetricsRecord>,
    pub final_val: Option<PqReport>,
    pub checkpoint: Option<PathBuf>,
}

struct Batcher {
    order: Vec<usize>,
    pos: usize,
}

impl Batcher {
    fn next(&mut self, n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
        let mut out = Vec::with_capacity(n);
        while out.len() < n {
            if self.pos == self.order.len() {
                self.order.shuffle(rng);
                self.pos = 0;
            }
            out.push(self.order[self.pos]);
            self.pos += 1;
        }
        out
    }
}

/// SGD over `train`, optionally validating on `val`. With `out_dir`, writes
/// `metrics.jsonl`, periodic `checkpoint_<step>.ckpt` files and `model.ckpt`.
pub fn train_loop(
    model: &mut FpsNet<f32>,
    train: &dyn Dataset,
    val: Option<&dyn Dataset>,
    cfg: &TrainConfig,
    out_dir: Option<&Path>,
    mut on_step: impl FnMut(&MetricsRecord),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    let labels = train.labels().clone();
    let mut log = match out_dir {
        Some(dir) => {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            let p = dir.join("metrics.jsonl");
            Some((std::fs::File::create(&p).map_err(|e| Error::io(&p, e))?, p))
        }
        None => None,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut batcher = Batcher {
        order: (0..train.len()).collect(),
        pos: train.len(),
    };
    let mut opt = Sgd::new(cfg.momentum, cfg.weight_decay);
    let mut records = Vec::with_capacity(cfg.total_steps);
    let mut final_val = None;

    for step in 0..cfg.total_steps {
        let lr = poly_lr(cfg.lr0, cfg.power, step, cfg.total_steps);
        let idx = batcher.next(cfg.batch_size, &mut rng);
        let mut samples = Vec::with_capacity(idx.len());
        for i in idx {
            samples.push(augment(&train.get(i)?, &cfg.augment, &labels, &mut rng));
        }
        let StepStats { l_det, l_pan, loss, .. } = train_step(model, &samples, &labels, cfg, &mut rng)?;
        if !(l_det.is_finite() && l_pan.is_finite()) {
            return Err(Error::NonFiniteLoss { step, l_det, l_pan });
        }
        opt.step(model, lr);

        let last = step + 1 == cfg.total_steps;
        let mut val_pq = None;
        if let Some(v) = val {
            if last || (cfg.val_every > 0 && (step + 1) % cfg.val_every == 0) {
                let report = evaluate(model, v, cfg.val_images)?;
                val_pq = Some(report.pq());
                if last {
                    final_val = Some(report);
                }
            }
        }
        let rec = MetricsRecord {
            step,
            l_det,
            l_pan,
            loss,
            lr,
            val_pq,
        };
        if let Some((f, p)) = log.as_mut() {
            let line = serde_json::to_string(&rec).expect("record serializes");
            writeln!(f, "{line}").map_err(|e| Error::io(p.as_path(), e))?;
        }
        on_step(&rec);
        records.push(rec);
        if let Some(dir) = out_dir {
            if cfg.checkpoint_every > 0 && (step + 1) % cfg.checkpoint_every == 0 && !last {
                checkpoint::save(model, &dir.join(format!("checkpoint_{:06}.ckpt", step + 1)))?;
            }
        }
    }

    let checkpoint = match out_dir {
        Some(dir) => {
            let p = dir.join("model.ckpt");
            checkpoint::save(model, &p)?;
            Some(p)
        }
        None => None,
    };
    Ok(TrainOutcome {
        records,
        final_val,
        checkpoint,
    })
}

/// How often the head segments a matched instance in the channel of the
/// slot that carried its mask.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct OrderStats {
    pub matched: usize,
    pub preserved: usize,
}

impl OrderStats {
    pub fn rate(&self) -> f64 {
        if self.matched == 0 {
            0.0
        } else {
            self.preserved as f64 / self.matched as f64
        }
    }
}

/// For each ground-truth instance matched to a slot, compare the plurality
/// output channel over its pixels with that slot.
pub fn order_preservation(model: &mut FpsNet<f32>, dataset: &dyn Dataset, limit: Option<usize>) -> Result<OrderStats> {
    let n_out = model.config.n_out();
    let mut stats = OrderStats::default();
    for_each_prediction(model, dataset, limit, 8, |sample, pred| {
        let assignment = match_masks(&pred.stack, &sample.gt_instances);
        for &(slot, g, _) in &assignment.pairs {
            let mut votes = vec![0usize; n_out];
            for (i, &m) in sample.gt_instances[g].mask.iter().enumerate() {
                if m {
                    votes[pred.channels[i]] += 1;
                }
            }
            let plurality = (0..n_out).fold(0, |best, k| if votes[k] > votes[best] { k } else { best });
            stats.matched += 1;
            if plurality == slot {
                stats.preserved += 1;
            }
        }
        Ok(())
    })?;
    Ok(stats)
}
