use ndarray::ArrayD;

use crate::model::FpsNet;
use crate::nn::{ParamSlot, Scalar};

/// Polynomial decay: `lr0 * (1 - step / total)^power`, zero from `total` on.
pub fn poly_lr(lr0: f64, power: f64, step: usize, total: usize) -> f64 {
    if step >= total {
        return 0.0;
    }
    lr0 * (1.0 - step as f64 / total as f64).powf(power)
}

/// SGD with momentum and L2 weight decay on every trainable parameter:
/// `v = mu * v + g + wd * w`, `w -= lr * v`.
#[derive(Clone, Debug)]
pub struct Sgd<T> {
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: Vec<ArrayD<T>>,
}

impl<T: Scalar> Sgd<T> {
    pub fn new(momentum: f64, weight_decay: f64) -> Self {
        Self {
            momentum,
            weight_decay,
            velocity: Vec::new(),
        }
    }

    pub fn step(&mut self, model: &mut FpsNet<T>, lr: f64) {
        let (mu, wd, lr) = (
            T::from(self.momentum).unwrap(),
            T::from(self.weight_decay).unwrap(),
            T::from(lr).unwrap(),
        );
        let mut i = 0;
        let velocity = &mut self.velocity;
        model.visit(&mut |_, slot| {
            let ParamSlot::Trainable(p) = slot else { return };
            if velocity.len() == i {
                velocity.push(ArrayD::zeros(p.value.raw_dim()));
            }
            let v = &mut velocity[i];
            ndarray::Zip::from(&mut *v)
                .and(&mut p.value)
                .and(&p.grad)
                .for_each(|v, w, &g| {
                    *v = mu * *v + g + wd * *w;
                    *w -= lr * *v;
                });
            i += 1;
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;

    #[test]
    fn schedule_endpoints_and_midpoint() {
        assert_eq!(poly_lr(0.01, 0.9, 0, 1000), 0.01);
        assert!((poly_lr(0.01, 0.9, 500, 1000) - 0.005359).abs() < 1e-6);
        assert_eq!(poly_lr(0.01, 0.9, 1000, 1000), 0.0);
    }

    #[test]
    fn one_step_matches_closed_form() {
        let cfg = ModelConfig {
            n_att: 2,
            n_stuff: 1,
            n_things: 1,
            f_dim: 4,
            backbone_width: 4,
            backbone_depth: 0,
            head_width: 4,
            ..Default::default()
        };
        let mut m = FpsNet::<f64>::new(cfg, 0).unwrap();
        let mut before = Vec::new();
        m.visit(&mut |_, slot| {
            if let ParamSlot::Trainable(p) = slot {
                p.grad.fill(0.5);
                before.push(p.value.clone());
            }
        });
        let mut opt = Sgd::new(0.9, 0.1);
        opt.step(&mut m, 0.2);
        let mut k = 0;
        m.visit(&mut |_, slot| {
            if let ParamSlot::Trainable(p) = slot {
                let expect = before[k].mapv(|w| w - 0.2 * (0.5 + 0.1 * w));
                assert!(p.value.iter().zip(&expect).all(|(a, b)| (a - b).abs() < 1e-12));
                k += 1;
            }
        });
    }
}
