use ndarray::{Array1, Array2, Array4, ArrayD, Axis, Ix1, IxDyn};

use super::param::join;
use super::{cast, Param, ParamSlot, Scalar, Visitor};

/// Per-channel batch normalization over `N * H * W`.
///
/// Training mode normalizes with batch statistics and folds them into the
/// running estimates as `running = momentum * running + (1 - momentum) * batch`.
/// Inference mode uses the running estimates.
#[derive(Clone, Debug)]
pub struct BatchNorm<T> {
    pub gamma: Param<T>,
    pub beta: Param<T>,
    pub running_mean: ArrayD<T>,
    pub running_var: ArrayD<T>,
    momentum: f64,
    eps: f64,
    cache: Option<BnCache<T>>,
}

#[derive(Clone, Debug)]
struct BnCache<T> {
    xhat: Array2<T>,
    inv_std: Array1<T>,
    train: bool,
}

impl<T: Scalar> BatchNorm<T> {
    pub fn new(channels: usize, momentum: f64) -> Self {
        Self {
            gamma: Param::new(ArrayD::ones(IxDyn(&[channels]))),
            beta: Param::zeros(&[channels]),
            running_mean: ArrayD::zeros(IxDyn(&[channels])),
            running_var: ArrayD::ones(IxDyn(&[channels])),
            momentum,
            eps: 1e-5,
            cache: None,
        }
    }

    pub fn forward(&mut self, x: &Array4<T>, train: bool) -> Array4<T> {
        let dim = x.dim();
        let c = dim.3;
        let m = dim.0 * dim.1 * dim.2;
        let x2 = x
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order((m, c))
            .expect("bn reshape");
        let eps = cast::<T>(self.eps);
        let (mean, var) = if train {
            let mean = x2.mean_axis(Axis(0)).expect("non-empty batch");
            let centered = &x2 - &mean;
            let var = (&centered * &centered).mean_axis(Axis(0)).unwrap();
            let mom = cast::<T>(self.momentum);
            let one = T::one();
            let unbiased = if m > 1 {
                &var * cast::<T>(m as f64 / (m as f64 - 1.0))
            } else {
                var.clone()
            };
            let mut rm = self.running_mean.view_mut().into_dimensionality::<Ix1>().unwrap();
            rm.zip_mut_with(&mean, |r, &b| *r = mom * *r + (one - mom) * b);
            let mut rv = self.running_var.view_mut().into_dimensionality::<Ix1>().unwrap();
            rv.zip_mut_with(&unbiased, |r, &b| *r = mom * *r + (one - mom) * b);
            (mean, var)
        } else {
            (
                self.running_mean.clone().into_dimensionality::<Ix1>().unwrap(),
                self.running_var.clone().into_dimensionality::<Ix1>().unwrap(),
            )
        };
        let inv_std = var.mapv(|v| T::one() / (v + eps).sqrt());
        let xhat = (&x2 - &mean) * &inv_std;
        let gamma = self.gamma.value.view().into_dimensionality::<Ix1>().unwrap();
        let beta = self.beta.value.view().into_dimensionality::<Ix1>().unwrap();
        let y = &xhat * &gamma + &beta;
        self.cache = Some(BnCache { xhat, inv_std, train });
        y.into_shape_with_order(dim).unwrap()
    }

    pub fn backward(&mut self, dy: &Array4<T>) -> Array4<T> {
        let cache = self.cache.take().expect("bn backward before forward");
        let dim = dy.dim();
        let (m, c) = cache.xhat.dim();
        let dy2 = dy
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order((m, c))
            .unwrap();
        let dgamma = (&dy2 * &cache.xhat).sum_axis(Axis(0));
        let dbeta = dy2.sum_axis(Axis(0));
        {
            let mut g = self.gamma.grad.view_mut().into_dimensionality::<Ix1>().unwrap();
            g += &dgamma;
            let mut b = self.beta.grad.view_mut().into_dimensionality::<Ix1>().unwrap();
            b += &dbeta;
        }
        let gamma = self.gamma.value.view().into_dimensionality::<Ix1>().unwrap();
        let dxhat = &dy2 * &gamma;
        let dx = if cache.train {
            let mf = cast::<T>(m as f64);
            let sum_dxhat = dxhat.sum_axis(Axis(0));
            let sum_dxhat_xhat = (&dxhat * &cache.xhat).sum_axis(Axis(0));
            let inner = &dxhat * mf - &sum_dxhat - &(&cache.xhat * &sum_dxhat_xhat);
            inner * &(cache.inv_std.mapv(|s| s / mf))
        } else {
            dxhat * &cache.inv_std
        };
        dx.into_shape_with_order(dim).unwrap()
    }

    pub fn visit(&mut self, prefix: &str, f: &mut Visitor<'_, T>) {
        f(&join(prefix, "gamma"), ParamSlot::Trainable(&mut self.gamma));
        f(&join(prefix, "beta"), ParamSlot::Trainable(&mut self.beta));
        f(&join(prefix, "running_mean"), ParamSlot::Buffer(&mut self.running_mean));
        f(&join(prefix, "running_var"), ParamSlot::Buffer(&mut self.running_var));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn training_output_is_standardized() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Array4::<f64>::from_shape_fn((2, 3, 3, 4), |_| rng.random_range(-3.0..5.0));
        let mut bn = BatchNorm::new(4, 0.9);
        let y = bn.forward(&x, true);
        let y2 = y.into_shape_with_order((18, 4)).unwrap();
        for c in 0..4 {
            let col = y2.column(c);
            let mean = col.mean().unwrap();
            let var = col.mapv(|v| (v - mean).powi(2)).mean().unwrap();
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-3);
        }
    }

    #[test]
    fn running_stats_use_momentum() {
        let x = Array4::<f64>::from_elem((1, 2, 1, 1), 2.0);
        let mut bn = BatchNorm::new(1, 0.9);
        bn.forward(&x, true);
        assert!((bn.running_mean[[0]] - 0.2).abs() < 1e-12);
        assert!((bn.running_var[[0]] - 0.9).abs() < 1e-12);
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = Array4::<f64>::from_shape_fn((2, 2, 3, 3), |_| rng.random_range(-1.0..1.0));
        let dy = Array4::<f64>::from_shape_fn(x.dim(), |_| rng.random_range(-1.0..1.0));
        let mut bn = BatchNorm::new(3, 0.9);
        bn.gamma.value = ArrayD::from_shape_vec(IxDyn(&[3]), vec![0.5, 1.5, -2.0]).unwrap();
        bn.forward(&x, true);
        let dx = bn.backward(&dy);
        let h = 1e-6;
        for idx in [(0, 0, 0, 0), (1, 1, 2, 2), (0, 1, 1, 1)] {
            let mut xp = x.clone();
            xp[idx] += h;
            let mut xm = x.clone();
            xm[idx] -= h;
            let lp = (bn.forward(&xp, true) * &dy).sum();
            let lm = (bn.forward(&xm, true) * &dy).sum();
            let num = (lp - lm) / (2.0 * h);
            assert!((num - dx[idx]).abs() < 1e-7, "{num} vs {}", dx[idx]);
        }
    }
}
