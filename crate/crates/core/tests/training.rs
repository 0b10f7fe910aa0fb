use fpsnet::data::{Dataset, SyntheticConfig, SyntheticDataset};
use fpsnet::model::{checkpoint, detector, DetectorKind};
use fpsnet::nn::ParamSlot;
use fpsnet::pipeline::{evaluate, input_batch};
use fpsnet::training::{train_loop, train_step, TrainConfig};
use fpsnet::{FpsNet, ModelConfig};
use ndarray::Array3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small_model(detector: DetectorKind) -> ModelConfig {
    ModelConfig {
        n_att: 8,
        n_things: 3,
        n_stuff: 2,
        detector,
        f_dim: 16,
        backbone_width: 8,
        head_width: 32,
        pad_multiple: 32,
        anchor_size: 16.0,
        ..ModelConfig::default()
    }
}

fn data(num_images: usize, seed: u64) -> SyntheticDataset {
    SyntheticDataset::new(SyntheticConfig {
        num_images,
        seed,
        ..SyntheticConfig::default()
    })
    .unwrap()
}

fn grad_norms(model: &mut FpsNet<f64>) -> (f64, f64) {
    let (mut det, mut rest) = (0.0, 0.0);
    model.visit(&mut |name, slot| {
        if let ParamSlot::Trainable(p) = slot {
            let n: f64 = p.grad.iter().map(|g| g * g).sum();
            if name.starts_with("detector") {
                det += n;
            } else {
                rest += n;
            }
        }
    });
    (det, rest)
}

#[test]
fn panoptic_loss_never_reaches_the_detector() {
    let ds = data(4, 0);
    let labels = ds.labels().clone();
    let samples: Vec<_> = (0..4).map(|i| ds.get(i).unwrap()).collect();
    let mut model = FpsNet::<f64>::new(small_model(DetectorKind::Learned), 1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);

    let pan_only = TrainConfig {
        lambda_det: 0.0,
        ..TrainConfig::default()
    };
    train_step(&mut model, &samples, &labels, &pan_only, &mut rng).unwrap();
    let (det, rest) = grad_norms(&mut model);
    assert_eq!(det, 0.0, "detector received gradient from the panoptic loss");
    assert!(rest > 0.0);

    train_step(&mut model, &samples, &labels, &TrainConfig::default(), &mut rng).unwrap();
    assert!(grad_norms(&mut model).0 > 0.0, "detection loss must train the detector");
}

#[test]
fn oracle_mode_has_zero_detection_loss() {
    let ds = data(2, 0);
    let samples: Vec<_> = (0..2).map(|i| ds.get(i).unwrap()).collect();
    let mut model = FpsNet::<f64>::new(small_model(DetectorKind::Oracle), 1).unwrap();
    let stats = train_step(&mut model, &samples, ds.labels(), &TrainConfig::default(), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    assert_eq!(stats.l_det, 0.0);
    assert_eq!(stats.loss, stats.l_pan);
    assert_eq!(grad_norms(&mut model).0, 0.0);
}

#[test]
fn inference_is_bitwise_repeatable() {
    let mut model = FpsNet::<f32>::new(small_model(DetectorKind::Learned), 2).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let image = Array3::<f32>::from_shape_fn((40, 72, 3), |_| rng.random());
    let batch = input_batch::<f32>(&[&image], 32).unwrap();
    let run = |m: &mut FpsNet<f32>| {
        let (_, dense) = m.features(&batch, false).unwrap();
        let (n, h, w, _) = dense.0.dim();
        let masks = ndarray::Array4::from_elem((n, h, w, 8), 0.5f32);
        m.head.forward(&dense, &masks, false).unwrap().tensor
    };
    let a = run(&mut model);
    let b = run(&mut model);
    assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
}

#[test]
fn smoke_run_loss_moving_average_decreases() {
    // One fixed full batch of small images and a gentle learning rate, so the
    // only step-to-step noise left is the slot shuffle.
    let train = SyntheticDataset::new(SyntheticConfig {
        height: 32,
        width: 32,
        size: (4, 8),
        num_images: 16,
        ..SyntheticConfig::default()
    })
    .unwrap();
    let cfg = TrainConfig {
        total_steps: 100,
        batch_size: 16,
        lr0: 0.002,
        ..TrainConfig::default()
    };
    let mut model = FpsNet::<f32>::new(small_model(DetectorKind::Oracle), 0).unwrap();
    let out = train_loop(&mut model, &train, None, &cfg, None, |_| {}).unwrap();
    let losses: Vec<f64> = out.records.iter().map(|r| r.loss).collect();
    assert_eq!(losses.len(), 100);
    let avg: Vec<f64> = losses.windows(20).map(|w| w.iter().sum::<f64>() / 20.0).collect();
    for (i, pair) in avg.windows(2).enumerate() {
        assert!(pair[1] < pair[0], "moving average rose at window {i}: {} -> {}", pair[0], pair[1]);
    }
}

#[test]
fn eval_reproduces_the_final_validation_of_training() {
    let (train, val) = (data(64, 0), data(16, 1));
    let cfg = TrainConfig {
        total_steps: 30,
        batch_size: 2,
        ..TrainConfig::default()
    };
    let dir = tempfile::tempdir().unwrap();
    let mut model = FpsNet::<f32>::new(small_model(DetectorKind::Oracle), 0).unwrap();
    let out = train_loop(&mut model, &train, Some(&val), &cfg, Some(dir.path()), |_| {}).unwrap();
    let logged = out.records.last().unwrap().val_pq.unwrap();
    let mut loaded = checkpoint::load::<f32>(&out.checkpoint.unwrap()).unwrap();
    let again = evaluate(&mut loaded, &val, None).unwrap();
    assert_eq!(again.pq(), logged);
    assert_eq!(again, out.final_val.unwrap());
    assert_eq!(evaluate(&mut loaded, &val, None).unwrap(), again);
}

/// A learned detector trained on the synthetic world finds the shapes.
#[test]
fn learned_detector_localizes_synthetic_shapes() {
    let (train, val) = (data(1000, 0), data(50, 1));
    let cfg = TrainConfig {
        total_steps: 1500,
        batch_size: 4,
        lambda_det: 1.0,
        ..TrainConfig::default()
    };
    let mut model = FpsNet::<f32>::new(small_model(DetectorKind::Learned), 0).unwrap();
    train_loop(&mut model, &train, None, &cfg, None, |_| {}).unwrap();

    let mut ious = Vec::new();
    for i in 0..val.len() {
        let s = val.get(i).unwrap();
        let batch = input_batch::<f32>(&[&s.image], model.config.pad_multiple).unwrap();
        let (pyramid, _) = model.features(&batch, false).unwrap();
        let out = model.detector.forward(pyramid.p3());
        let dets = detector::decode(&out, 0, &model.config, (s.height(), s.width()));
        for g in &s.gt_instances {
            ious.push(dets.iter().map(|d| d.bbox.iou(&g.bbox)).fold(0.0, f64::max));
        }
    }
    let mean = ious.iter().sum::<f64>() / ious.len() as f64;
    assert!(mean >= 0.5, "mean best-match IoU {mean:.3} over {} instances", ious.len());
}
