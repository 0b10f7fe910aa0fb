//! Training-time augmentation: random rescale, crop/pad and horizontal flip.
//! Images are resampled bilinearly, label maps by nearest neighbour, and the
//! instance list is recomputed from the transformed map.

use ndarray::{Array3, Array4};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Sample;
use crate::error::{Error, Result};
use crate::nn::resize_bilinear;
use crate::panoptic::{LabelSpace, PanopticLabelMap};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentConfig {
    pub enabled: bool,
    pub scale_min: f64,
    pub scale_max: f64,
    /// Fixed `(height, width)` crop after scaling; pads with void when needed.
    pub crop: Option<(usize, usize)>,
    pub flip: bool,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            enabled: false,
            scale_min: 0.5,
            scale_max: 1.5,
            crop: None,
            flip: false,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.scale_min > 0.0 && self.scale_min <= self.scale_max) {
            return Err(Error::Config("augment scale range must satisfy 0 < min <= max".into()));
        }
        if matches!(self.crop, Some((h, w)) if h == 0 || w == 0) {
            return Err(Error::Config("augment crop must be positive".into()));
        }
        Ok(())
    }
}

pub fn scale_sample(sample: &Sample, out_h: usize, out_w: usize, labels: &LabelSpace) -> Sample {
    let (h, w) = (sample.height(), sample.width());
    let image = if (out_h, out_w) == (h, w) {
        sample.image.clone()
    } else {
        let x = sample.image.clone().insert_axis(ndarray::Axis(0));
        let y: Array4<f32> = resize_bilinear(&x, out_h, out_w);
        y.index_axis_move(ndarray::Axis(0), 0)
    };
    let src = &sample.gt_panoptic;
    let mut map = PanopticLabelMap::void(out_h, out_w);
    for y in 0..out_h {
        // Nearest source pixel under half-pixel centre alignment.
        let sy = (((y as f64 + 0.5) * h as f64 / out_h as f64) as usize).min(h - 1);
        for x in 0..out_w {
            let sx = (((x as f64 + 0.5) * w as f64 / out_w as f64) as usize).min(w - 1);
            let (i, j) = (sy * w + sx, y * out_w + x);
            map.class[j] = src.class[i];
            map.instance[j] = src.instance[i];
            map.crowd[j] = src.crowd[i];
        }
    }
    Sample::new(sample.name.clone(), image, map, labels)
}

/// Window `[y0, y0 + ch) x [x0, x0 + cw)`; out-of-range parts become zero
/// pixels with void labels.
pub fn crop_sample(sample: &Sample, y0: i64, x0: i64, ch: usize, cw: usize, labels: &LabelSpace) -> Sample {
    let (h, w) = (sample.height() as i64, sample.width() as i64);
    let mut image = Array3::<f32>::zeros((ch, cw, 3));
    let mut map = PanopticLabelMap::void(ch, cw);
    let src = &sample.gt_panoptic;
    for y in 0..ch {
        let sy = y0 + y as i64;
        if !(0..h).contains(&sy) {
            continue;
        }
        for x in 0..cw {
            let sx = x0 + x as i64;
            if !(0..w).contains(&sx) {
                continue;
            }
            for c in 0..3 {
                image[[y, x, c]] = sample.image[[sy as usize, sx as usize, c]];
            }
            let (i, j) = (sy as usize * w as usize + sx as usize, y * cw + x);
            map.class[j] = src.class[i];
            map.instance[j] = src.instance[i];
            map.crowd[j] = src.crowd[i];
        }
    }
    Sample::new(sample.name.clone(), image, map, labels)
}

pub fn flip_sample(sample: &Sample, labels: &LabelSpace) -> Sample {
    let (h, w) = (sample.height(), sample.width());
    let mut image = sample.image.clone();
    image.invert_axis(ndarray::Axis(1));
    let src = &sample.gt_panoptic;
    let mut map = PanopticLabelMap::void(h, w);
    for y in 0..h {
        for x in 0..w {
            let (i, j) = (y * w + (w - 1 - x), y * w + x);
            map.class[j] = src.class[i];
            map.instance[j] = src.instance[i];
            map.crowd[j] = src.crowd[i];
        }
    }
    Sample::new(sample.name.clone(), image.as_standard_layout().to_owned(), map, labels)
}

pub fn augment<R: Rng + ?Sized>(sample: &Sample, cfg: &AugmentConfig, labels: &LabelSpace, rng: &mut R) -> Sample {
    if !cfg.enabled {
        return sample.clone();
    }
    let s = if cfg.scale_min < cfg.scale_max {
        rng.random_range(cfg.scale_min..=cfg.scale_max)
    } else {
        cfg.scale_min
    };
    let out_h = ((sample.height() as f64 * s).round() as usize).max(1);
    let out_w = ((sample.width() as f64 * s).round() as usize).max(1);
    let mut out = scale_sample(sample, out_h, out_w, labels);
    if let Some((ch, cw)) = cfg.crop {
        let y0 = rng.random_range(0..=out_h.saturating_sub(ch)) as i64;
        let x0 = rng.random_range(0..=out_w.saturating_sub(cw)) as i64;
        out = crop_sample(&out, y0, x0, ch, cw, labels);
    }
    if cfg.flip && rng.random_bool(0.5) {
        out = flip_sample(&out, labels);
    }
    out
}
