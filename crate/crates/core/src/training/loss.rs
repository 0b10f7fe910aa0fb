use ndarray::Array4;

use crate::nn::Scalar;

use super::target::TargetMap;

/// Mean per-pixel softmax cross-entropy over a batch, and its gradient
/// w.r.t. the logits. Every pixel counts, including void.
pub fn panoptic_loss<T: Scalar>(logits: &Array4<T>, targets: &[TargetMap]) -> (f64, Array4<T>) {
    let (n, h, w, c) = logits.dim();
    assert_eq!(targets.len(), n, "one target per batch element");
    let count = (n * h * w) as f64;
    let inv = T::from(1.0 / count).unwrap();
    let logits = logits.as_standard_layout();
    let src = logits.as_slice().unwrap();
    let mut grad = vec![T::zero(); src.len()];
    let mut total = 0.0f64;
    for b in 0..n {
        let t = &targets[b];
        assert_eq!((t.height, t.width), (h, w), "target shape");
        for p in 0..h * w {
            let off = (b * h * w + p) * c;
            let row = &src[off..off + c];
            let label = t.channels[p];
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut sum = T::zero();
            for &v in row {
                sum += (v - max).exp();
            }
            let log_z = max + sum.ln();
            total += (log_z - row[label]).to_f64().unwrap();
            let g = &mut grad[off..off + c];
            for (k, (gk, &v)) in g.iter_mut().zip(row).enumerate() {
                let p = (v - log_z).exp();
                *gk = (p - if k == label { T::one() } else { T::zero() }) * inv;
            }
        }
    }
    (
        total / count,
        Array4::from_shape_vec((n, h, w, c), grad).unwrap(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn target(h: usize, w: usize, ch: Vec<usize>) -> TargetMap {
        TargetMap {
            height: h,
            width: w,
            channels: ch,
        }
    }

    #[test]
    fn uniform_logits_give_log_of_channel_count() {
        let logits = Array4::<f64>::zeros((1, 3, 3, 63));
        let (l, _) = panoptic_loss(&logits, &[target(3, 3, vec![5; 9])]);
        assert!((l - 63f64.ln()).abs() < 1e-12);
        assert!((l - 4.143).abs() < 1e-3);
    }

    #[test]
    fn confident_correct_logits_approach_zero() {
        let mut logits = Array4::<f64>::zeros((1, 2, 2, 4));
        for y in 0..2 {
            for x in 0..2 {
                logits[[0, y, x, 2]] = 60.0;
            }
        }
        let (l, _) = panoptic_loss(&logits, &[target(2, 2, vec![2; 4])]);
        assert!(l >= 0.0 && l < 1e-20);
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let logits = Array4::<f64>::from_shape_fn((1, 2, 2, 5), |_| rng.random_range(-2.0..2.0));
        let t = [target(2, 2, vec![0, 4, 2, 2])];
        let (_, g) = panoptic_loss(&logits, &t);
        let h = 1e-6;
        for (idx, &a) in g.indexed_iter() {
            let mut p = logits.clone();
            p[idx] += h;
            let mut m = logits.clone();
            m[idx] -= h;
            let num = (panoptic_loss(&p, &t).0 - panoptic_loss(&m, &t).0) / (2.0 * h);
            let rel = (num - a).abs() / a.abs().max(num.abs()).max(1e-12);
            assert!(rel < 1e-6, "{idx:?}: {a} vs {num}");
        }
    }
}
