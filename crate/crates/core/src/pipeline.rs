//! Inference: image → padded batch → backbone → boxes → attention masks →
//! dense features → head → per-pixel argmax.

use ndarray::{s, Array3, Array4};

use crate::data::{normalize_batch, Dataset, Sample};
use crate::error::{Error, Result};
use crate::fusion::{argmax_channels, labels_from_channels};
use crate::maskgen::{build_stack, AttentionStack, Detection};
use crate::metrics::{aggregate_reports, compute_pq, PqReport};
use crate::model::{detector, DetectorKind, FpsNet};
use crate::nn::Scalar;
use crate::panoptic::{LabelSpace, PanopticLabelMap};
use crate::FEATURE_STRIDE;

/// Steps of one prediction, recorded in execution order.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Preprocess,
    Backbone,
    Detector,
    OracleBoxes,
    MaskGeneration,
    FeatureMerge,
    PanopticHead,
    /// Bilinear upsampling and per-pixel argmax.
    Argmax,
}

/// The only stage sequences a prediction may follow. Nothing runs after the
/// per-pixel argmax.
pub const LEARNED_TRACE: [Stage; 7] = [
    Stage::Preprocess,
    Stage::Backbone,
    Stage::Detector,
    Stage::MaskGeneration,
    Stage::FeatureMerge,
    Stage::PanopticHead,
    Stage::Argmax,
];
pub const ORACLE_TRACE: [Stage; 7] = [
    Stage::Preprocess,
    Stage::Backbone,
    Stage::OracleBoxes,
    Stage::MaskGeneration,
    Stage::FeatureMerge,
    Stage::PanopticHead,
    Stage::Argmax,
];

#[derive(Clone, Debug)]
pub struct Prediction {
    pub panoptic: PanopticLabelMap,
    /// Winning head channel per input pixel.
    pub channels: Vec<usize>,
    pub stack: AttentionStack,
    pub detections: Vec<Detection>,
}

/// Normalize, then zero-pad (bottom/right) every image into one batch whose
/// sides are multiples of `multiple` and cover the largest image.
pub fn input_batch<T: Scalar>(images: &[&Array3<f32>], multiple: usize) -> Result<Array4<T>> {
    if images.is_empty() {
        return Err(Error::Shape("empty batch".into()));
    }
    let round = |v: usize| v.div_ceil(multiple).max(1) * multiple;
    let h = round(images.iter().map(|i| i.dim().0).max().unwrap());
    let w = round(images.iter().map(|i| i.dim().1).max().unwrap());
    let mut out = Array4::<T>::zeros((images.len(), h, w, 3));
    for (b, im) in images.iter().enumerate() {
        if im.dim().2 != 3 || im.dim().0 == 0 || im.dim().1 == 0 {
            return Err(Error::Shape(format!("image {b} has shape {:?}, expected [H, W, 3]", im.dim())));
        }
        let n = normalize_batch(&[im]);
        let (ih, iw, _) = im.dim();
        out.slice_mut(s![b, ..ih, ..iw, ..])
            .assign(&n.index_axis(ndarray::Axis(0), 0).mapv(|v| T::from(v).unwrap()));
    }
    Ok(out)
}

/// Predict a batch. In oracle mode `boxes[b]` supplies image `b`'s boxes;
/// in learned mode `boxes` overrides the detector when given.
pub fn predict_batch<T: Scalar>(
    model: &mut FpsNet<T>,
    images: &[&Array3<f32>],
    boxes: Option<&[Vec<Detection>]>,
    labels: &LabelSpace,
    trace: &mut Vec<Stage>,
) -> Result<Vec<Prediction>> {
    let cfg = model.config.clone();
    if labels.num_stuff() != cfg.n_stuff || labels.num_things() != cfg.n_things {
        return Err(Error::Config(format!(
            "model has {} things / {} stuff, dataset has {} / {}",
            cfg.n_things,
            cfg.n_stuff,
            labels.num_things(),
            labels.num_stuff()
        )));
    }
    if let Some(b) = boxes {
        if b.len() != images.len() {
            return Err(Error::Shape("one box list per image required".into()));
        }
    } else if cfg.detector == DetectorKind::Oracle {
        return Err(Error::Config("oracle detector needs ground-truth boxes".into()));
    }
    trace.push(Stage::Preprocess);
    let batch = input_batch::<T>(images, cfg.pad_multiple)?;
    trace.push(Stage::Backbone);
    let pyramid = model.backbone.forward(&batch, false)?;
    let (hf, wf) = (pyramid.p3().dim().1, pyramid.p3().dim().2);
    let detections: Vec<Vec<Detection>> = match boxes {
        Some(b) => {
            trace.push(Stage::OracleBoxes);
            b.to_vec()
        }
        None => {
            trace.push(Stage::Detector);
            let out = model.detector.forward(pyramid.p3());
            (0..images.len())
                .map(|b| detector::decode(&out, b, &cfg, (images[b].dim().0, images[b].dim().1)))
                .collect()
        }
    };
    trace.push(Stage::MaskGeneration);
    let stacks: Vec<AttentionStack> = detections
        .iter()
        .map(|d| build_stack(d, hf, wf, &cfg, cfg.inference_seed))
        .collect();
    trace.push(Stage::FeatureMerge);
    let dense = model.fpn.forward(pyramid.p3(), pyramid.p4(), pyramid.p5())?;
    trace.push(Stage::PanopticHead);
    let masks = AttentionStack::batch_tensor::<T>(&stacks);
    let logits = model.head.forward(&dense, &masks, false)?;
    trace.push(Stage::Argmax);
    let mut out = Vec::with_capacity(images.len());
    for (b, (stack, dets)) in stacks.into_iter().zip(detections).enumerate() {
        let hw = (images[b].dim().0, images[b].dim().1);
        debug_assert_eq!(logits.tensor.dim().1 * FEATURE_STRIDE, batch.dim().1);
        let channels = argmax_channels(logits.tensor.index_axis(ndarray::Axis(0), b), &stack, hw)?;
        let panoptic = labels_from_channels(&channels, &stack, labels, hw);
        out.push(Prediction {
            panoptic,
            channels,
            stack,
            detections: dets,
        });
    }
    Ok(out)
}

pub fn predict<T: Scalar>(
    model: &mut FpsNet<T>,
    image: &Array3<f32>,
    boxes: Option<&[Detection]>,
    labels: &LabelSpace,
) -> Result<Prediction> {
    let owned = boxes.map(|b| vec![b.to_vec()]);
    let mut trace = Vec::new();
    Ok(predict_batch(model, &[image], owned.as_deref(), labels, &mut trace)?.remove(0))
}

/// Boxes the model should see for a sample: exact ground truth in oracle
/// mode, none (use the detector) otherwise.
pub fn eval_boxes<T: Scalar>(model: &FpsNet<T>, sample: &Sample) -> Option<Vec<Detection>> {
    (model.config.detector == DetectorKind::Oracle).then(|| {
        detector::oracle_detections(&sample.gt_instances, 0.0, 0.0, &mut <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0))
    })
}

/// Run `f` on predictions for the first `limit` samples, in batches of
/// equally sized images.
pub fn for_each_prediction<T: Scalar>(
    model: &mut FpsNet<T>,
    dataset: &dyn Dataset,
    limit: Option<usize>,
    batch_size: usize,
    mut f: impl FnMut(&Sample, &Prediction) -> Result<()>,
) -> Result<()> {
    let n = limit.map_or(dataset.len(), |l| l.min(dataset.len()));
    let labels = dataset.labels().clone();
    let mut i = 0;
    while i < n {
        let first = dataset.get(i)?;
        let mut samples = vec![first];
        while samples.len() < batch_size.max(1) && i + samples.len() < n {
            let next = dataset.get(i + samples.len())?;
            if (next.height(), next.width()) != (samples[0].height(), samples[0].width()) {
                break;
            }
            samples.push(next);
        }
        let images: Vec<_> = samples.iter().map(|s| &s.image).collect();
        let boxes: Option<Vec<Vec<Detection>>> = samples.iter().map(|s| eval_boxes(model, s)).collect();
        let preds = predict_batch(model, &images, boxes.as_deref(), &labels, &mut Vec::new())?;
        for (s, p) in samples.iter().zip(&preds) {
            f(s, p)?;
        }
        i += samples.len();
    }
    Ok(())
}

/// PQ over the first `limit` samples of a dataset.
pub fn evaluate<T: Scalar>(model: &mut FpsNet<T>, dataset: &dyn Dataset, limit: Option<usize>) -> Result<PqReport> {
    let labels = dataset.labels().clone();
    let mut reports = vec![PqReport::empty(&labels)];
    for_each_prediction(model, dataset, limit, 8, |s, p| {
        reports.push(compute_pq(&p.panoptic, &s.gt_panoptic, &labels)?);
        Ok(())
    })?;
    aggregate_reports(&reports)
}

/// Inference-only timing of single images.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct BenchmarkReport {
    pub height: usize,
    pub width: usize,
    pub warmup: usize,
    pub iterations: usize,
    pub mean_ms: f64,
    pub std_ms: f64,
    pub samples_ms: Vec<f64>,
    /// Always "n/a": the argmax is the last step and nothing merges outputs.
    pub merging: String,
    pub stages: Vec<String>,
}

/// Time `iterations` predictions on a fixed random image after `warmup`
/// untimed ones. Each timed call must follow [`LEARNED_TRACE`] exactly.
pub fn benchmark<T: Scalar>(
    model: &mut FpsNet<T>,
    labels: &LabelSpace,
    (height, width): (usize, usize),
    warmup: usize,
    iterations: usize,
) -> Result<BenchmarkReport> {
    use rand::{Rng, SeedableRng};
    if height == 0 || width == 0 || iterations == 0 {
        return Err(Error::Config("benchmark needs a positive resolution and iteration count".into()));
    }
    model.config.detector = DetectorKind::Learned;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
    let image = Array3::<f32>::from_shape_fn((height, width, 3), |_| rng.random());
    let mut run = |trace: &mut Vec<Stage>| predict_batch(model, &[&image], None, labels, trace).map(|_| ());
    for _ in 0..warmup {
        run(&mut Vec::new())?;
    }
    let mut samples = Vec::with_capacity(iterations);
    let mut stages = Vec::new();
    for _ in 0..iterations {
        let mut trace = Vec::with_capacity(LEARNED_TRACE.len());
        let t0 = std::time::Instant::now();
        run(&mut trace)?;
        samples.push(t0.elapsed().as_secs_f64() * 1e3);
        if trace != LEARNED_TRACE {
            return Err(Error::Shape(format!("unexpected stage sequence {trace:?}")));
        }
        stages = trace;
    }
    let mean = samples.iter().sum::<f64>() / samples.len() as f64;
    let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / samples.len() as f64;
    Ok(BenchmarkReport {
        height,
        width,
        warmup,
        iterations,
        mean_ms: mean,
        std_ms: var.sqrt(),
        samples_ms: samples,
        merging: "n/a".into(),
        stages: stages.iter().map(|s| format!("{s:?}")).collect(),
    })
}
