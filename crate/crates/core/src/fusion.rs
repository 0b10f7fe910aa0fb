//! From head logits to a panoptic label map: bilinear upsampling of the
//! logits, then a per-pixel argmax. There is no merging step.

use std::path::Path;

use ndarray::{Array3, ArrayView3};

use crate::error::{Error, Result};
use crate::maskgen::AttentionStack;
use crate::nn::{BilinearAxis, Scalar};
use crate::panoptic::{LabelSpace, PanopticLabelMap, VOID_CLASS};
use crate::FEATURE_STRIDE;

/// Winning output channel per input pixel.
///
/// `logits` is `[Hf, Wf, n_out]` on the stride-8 grid of the padded input;
/// it is upsampled to `8 * (Hf, Wf)` and cropped to `image_hw` (padding sits
/// at the bottom/right). Channels of empty slots never win. Ties go to the
/// lowest channel.
pub fn argmax_channels<T: Scalar>(
    logits: ArrayView3<'_, T>,
    stack: &AttentionStack,
    image_hw: (usize, usize),
) -> Result<Vec<usize>> {
    let (hf, wf, c) = logits.dim();
    let n_att = stack.n_att();
    if c < n_att + 2 {
        return Err(Error::Shape(format!("{c} logit channels cannot hold {n_att} slots")));
    }
    let (ph, pw) = (hf * FEATURE_STRIDE, wf * FEATURE_STRIDE);
    let (h, w) = image_hw;
    if h > ph || w > pw || h == 0 || w == 0 {
        return Err(Error::Shape(format!(
            "image {h}x{w} does not fit the {ph}x{pw} logit grid"
        )));
    }
    let allowed: Vec<bool> = (0..c).map(|k| k >= n_att || !stack.is_empty_slot(k)).collect();
    let ay = BilinearAxis::new(hf, ph);
    let ax = BilinearAxis::new(wf, pw);
    let l = logits.as_standard_layout();
    let src = l.as_slice().unwrap();
    let mut out = Vec::with_capacity(h * w);
    let mut row = vec![0.0f64; c];
    for y in 0..h {
        let (y0, y1, ty) = (ay.lo[y], ay.hi[y], ay.w_hi[y]);
        for x in 0..w {
            let (x0, x1, tx) = (ax.lo[x], ax.hi[x], ax.w_hi[x]);
            let taps = [
                ((y0 * wf + x0) * c, (1.0 - ty) * (1.0 - tx)),
                ((y0 * wf + x1) * c, (1.0 - ty) * tx),
                ((y1 * wf + x0) * c, ty * (1.0 - tx)),
                ((y1 * wf + x1) * c, ty * tx),
            ];
            row.fill(0.0);
            for &(off, wt) in &taps {
                if wt != 0.0 {
                    for (r, v) in row.iter_mut().zip(&src[off..off + c]) {
                        *r += wt * v.to_f64().unwrap();
                    }
                }
            }
            let mut best = usize::MAX;
            for k in 0..c {
                if allowed[k] && (best == usize::MAX || row[k] > row[best]) {
                    best = k;
                }
            }
            out.push(best);
        }
    }
    Ok(out)
}

/// Label of one output channel.
pub fn channel_label(channel: usize, stack: &AttentionStack, labels: &LabelSpace) -> (u16, u32) {
    let n_att = stack.n_att();
    if channel < n_att {
        match &stack.slot_detections[channel] {
            Some(d) => (d.class_id, channel as u32 + 1),
            None => (VOID_CLASS, 0),
        }
    } else if channel - n_att < labels.num_stuff() {
        (labels.stuff_class(channel - n_att), 0)
    } else {
        (VOID_CLASS, 0)
    }
}

/// Panoptic map at `image_hw` from one image's logits and the (shuffled)
/// attention stack that was fed to the head.
pub fn fuse<T: Scalar>(
    logits: ArrayView3<'_, T>,
    stack: &AttentionStack,
    labels: &LabelSpace,
    image_hw: (usize, usize),
) -> Result<PanopticLabelMap> {
    let expected = stack.n_att() + labels.num_stuff() + 2;
    if logits.dim().2 != expected {
        return Err(Error::Shape(format!(
            "logits have {} channels; {} slots and {} stuff classes need {expected}",
            logits.dim().2,
            stack.n_att(),
            labels.num_stuff()
        )));
    }
    let channels = argmax_channels(logits, stack, image_hw)?;
    Ok(labels_from_channels(&channels, stack, labels, image_hw))
}

pub fn labels_from_channels(
    channels: &[usize],
    stack: &AttentionStack,
    labels: &LabelSpace,
    image_hw: (usize, usize),
) -> PanopticLabelMap {
    let mut map = PanopticLabelMap::void(image_hw.0, image_hw.1);
    for (i, &ch) in channels.iter().enumerate() {
        let (class, instance) = channel_label(ch, stack, labels);
        map.class[i] = class;
        map.instance[i] = instance;
    }
    map
}

/// Deterministic color for a segment: hue walks the golden ratio over a
/// per-segment key; stuff is desaturated.
pub fn segment_color(class: u16, instance: u32, labels: &LabelSpace) -> [u8; 3] {
    let key = class as u64 * 7919 + instance as u64 * 104_729;
    let hue = (key as f64 * 0.618_033_988_749_895).fract();
    let (s, v) = if labels.is_stuff(class) { (0.35, 0.85) } else { (0.9, 0.95) };
    let i = (hue * 6.0).floor();
    let f = hue * 6.0 - i;
    let (p, q, t) = (v * (1.0 - s), v * (1.0 - f * s), v * (1.0 - (1.0 - f) * s));
    let rgb = match i as u32 % 6 {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    };
    rgb.map(|c| (c * 255.0).round() as u8)
}

/// Alpha-blend segment colors over `image` (`[H, W, 3]` in `[0, 1]`); void
/// pixels show the image unchanged.
pub fn overlay(image: &Array3<f32>, map: &PanopticLabelMap, labels: &LabelSpace, alpha: f32) -> image::RgbImage {
    let (h, w, _) = image.dim();
    image::RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let (x, y) = (x as usize, y as usize);
        let base = [0, 1, 2].map(|c| image[[y, x, c]].clamp(0.0, 1.0) * 255.0);
        let (class, instance) = map.get(x, y);
        let px = if class == VOID_CLASS {
            base
        } else {
            let col = segment_color(class, instance, labels);
            [0, 1, 2].map(|c| (1.0 - alpha) * base[c] + alpha * col[c] as f32)
        };
        image::Rgb(px.map(|v| v.round() as u8))
    })
}

pub fn render_overlay(
    image: &Array3<f32>,
    map: &PanopticLabelMap,
    labels: &LabelSpace,
    alpha: f32,
    path: &Path,
) -> Result<()> {
    if (map.height, map.width) != (image.dim().0, image.dim().1) {
        return Err(Error::Shape("overlay: image and label map sizes differ".into()));
    }
    overlay(image, map, labels, alpha)
        .save(path)
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })
}
