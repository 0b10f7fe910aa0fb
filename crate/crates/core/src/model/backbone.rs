use ndarray::{s, Array4};
use rand::Rng;

use super::block::{BlockOrder, ConvBlock};
use super::ModelConfig;
use crate::error::{Error, Result};
use crate::nn::{Conv2d, Relu, Scalar, Visitor};

/// Levels P3..P7 at strides 8, 16, 32, 64, 128, all `f_dim` channels deep.
#[derive(Clone, Debug)]
pub struct FeaturePyramid<T> {
    pub levels: [Array4<T>; 5],
}

impl<T> FeaturePyramid<T> {
    pub fn p3(&self) -> &Array4<T> {
        &self.levels[0]
    }
    pub fn p4(&self) -> &Array4<T> {
        &self.levels[1]
    }
    pub fn p5(&self) -> &Array4<T> {
        &self.levels[2]
    }
    pub fn p6(&self) -> &Array4<T> {
        &self.levels[3]
    }
    pub fn p7(&self) -> &Array4<T> {
        &self.levels[4]
    }

    /// `(height, width)` of every level, P3 first.
    pub fn spatial_sizes(&self) -> Vec<(usize, usize)> {
        self.levels.iter().map(|l| (l.dim().1, l.dim().2)).collect()
    }
}

/// Zero-pad an NHWC batch on the bottom/right to multiples of `multiple`.
pub fn pad_image<T: Scalar>(image: &Array4<T>, multiple: usize) -> Array4<T> {
    let (n, h, w, c) = image.dim();
    let ph = h.div_ceil(multiple) * multiple;
    let pw = w.div_ceil(multiple) * multiple;
    if (ph, pw) == (h, w) {
        return image.clone();
    }
    let mut out = Array4::zeros((n, ph, pw, c));
    out.slice_mut(s![.., ..h, ..w, ..]).assign(image);
    out
}

type Stage<T> = Vec<ConvBlock<T>>;

/// Plain strided conv backbone. Stages at strides 2..32 are conv-BN-ReLU
/// blocks; P6 and P7 are extra stride-2 convs on top of P5.
#[derive(Clone, Debug)]
pub struct Backbone<T> {
    stages: Vec<Stage<T>>,
    p6: Conv2d<T>,
    p7_relu: Relu<T>,
    p7: Conv2d<T>,
}

impl<T: Scalar> Backbone<T> {
    pub fn new<R: Rng + ?Sized>(cfg: &ModelConfig, rng: &mut R) -> Self {
        let widths = [
            cfg.backbone_width,
            cfg.backbone_width,
            cfg.f_dim,
            cfg.f_dim,
            cfg.f_dim,
        ];
        let mut c_in = 3;
        let mut stages = Vec::new();
        for &c_out in &widths {
            let mut stage = vec![ConvBlock::new(
                c_in,
                c_out,
                2,
                BlockOrder::ConvBnRelu,
                cfg.init_std,
                cfg.bn_momentum,
                rng,
            )];
            for _ in 0..cfg.backbone_depth {
                stage.push(ConvBlock::new(
                    c_out,
                    c_out,
                    1,
                    BlockOrder::ConvBnRelu,
                    cfg.init_std,
                    cfg.bn_momentum,
                    rng,
                ));
            }
            stages.push(stage);
            c_in = c_out;
        }
        Self {
            stages,
            p6: Conv2d::new(cfg.f_dim, cfg.f_dim, 3, 2, cfg.init_std, rng),
            p7_relu: Relu::new(),
            p7: Conv2d::new(cfg.f_dim, cfg.f_dim, 3, 2, cfg.init_std, rng),
        }
    }

    /// Expects an already padded, normalized `[N, H, W, 3]` batch.
    pub fn forward(&mut self, image: &Array4<T>, train: bool) -> Result<FeaturePyramid<T>> {
        let (n, h, w, c) = image.dim();
        if c != 3 {
            return Err(Error::Shape(format!("backbone expects 3 channels, got {c}")));
        }
        if n == 0 || h == 0 || w == 0 {
            return Err(Error::Shape(format!(
                "input {h}x{w} (batch {n}) has no spatial extent"
            )));
        }
        let mut x = image.clone();
        let mut outs = Vec::with_capacity(3);
        for (i, stage) in self.stages.iter_mut().enumerate() {
            for block in stage.iter_mut() {
                x = block.forward(&x, train);
            }
            if i >= 2 {
                outs.push(x.clone());
            }
        }
        let p6 = self.p6.forward(&x);
        let p7 = self.p7.forward(&self.p7_relu.forward(p6.clone()));
        let [p3, p4, p5]: [Array4<T>; 3] = outs.try_into().expect("three stages");
        let pyramid = FeaturePyramid {
            levels: [p3, p4, p5, p6, p7],
        };
        if pyramid.spatial_sizes().iter().any(|&(a, b)| a == 0 || b == 0) {
            return Err(Error::Shape("a pyramid level has zero extent".into()));
        }
        Ok(pyramid)
    }

    /// Backpropagate gradients arriving at P3, P4 and P5. P6/P7 feed nothing
    /// trainable downstream, so their convs receive no gradient.
    pub fn backward(&mut self, d_p3: Array4<T>, d_p4: Array4<T>, d_p5: Array4<T>) {
        let mut grads = [Some(d_p3), Some(d_p4), Some(d_p5)];
        let mut d: Option<Array4<T>> = None;
        for i in (0..self.stages.len()).rev() {
            if i >= 2 {
                let incoming = grads[i - 2].take().unwrap();
                d = Some(match d {
                    Some(acc) => acc + incoming,
                    None => incoming,
                });
            }
            let mut g = d.take().expect("gradient reaches every stage");
            for block in self.stages[i].iter_mut().rev() {
                g = block.backward(g);
            }
            d = Some(g);
        }
    }

    pub fn visit(&mut self, prefix: &str, f: &mut Visitor<'_, T>) {
        for (i, stage) in self.stages.iter_mut().enumerate() {
            for (j, block) in stage.iter_mut().enumerate() {
                block.visit(&format!("{prefix}.stage{}.block{j}", i + 1), f);
            }
        }
        self.p6.visit(&format!("{prefix}.p6"), f);
        self.p7.visit(&format!("{prefix}.p7"), f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small() -> ModelConfig {
        ModelConfig {
            f_dim: 8,
            backbone_width: 4,
            backbone_depth: 0,
            ..Default::default()
        }
    }

    #[test]
    fn level_sizes_follow_strides() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut bb = Backbone::<f32>::new(&small(), &mut rng);
        let p = bb.forward(&Array4::zeros((1, 128, 128, 3)), false).unwrap();
        assert_eq!(
            p.spatial_sizes(),
            vec![(16, 16), (8, 8), (4, 4), (2, 2), (1, 1)]
        );
        assert!(p.levels.iter().all(|l| l.dim().3 == 8));
    }

    #[test]
    fn wide_input_level_sizes() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut bb = Backbone::<f32>::new(&small(), &mut rng);
        let p = bb.forward(&Array4::zeros((1, 512, 1024, 3)), false).unwrap();
        assert_eq!(p.spatial_sizes()[0], (64, 128));
        assert_eq!(p.spatial_sizes()[4], (4, 8));
    }

    #[test]
    fn zeros_give_finite_levels() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut bb = Backbone::<f32>::new(&small(), &mut rng);
        for train in [false, true] {
            let p = bb.forward(&Array4::zeros((2, 128, 128, 3)), train).unwrap();
            assert!(p.levels.iter().all(|l| l.iter().all(|v| v.is_finite())));
        }
    }

    #[test]
    fn rejects_empty_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut bb = Backbone::<f32>::new(&small(), &mut rng);
        assert!(bb.forward(&Array4::zeros((1, 0, 128, 3)), false).is_err());
    }

    #[test]
    fn padding_reaches_multiple() {
        let img = Array4::<f32>::ones((1, 70, 130, 3));
        let p = pad_image(&img, 128);
        assert_eq!(p.dim(), (1, 128, 256, 3));
        assert_eq!(p[[0, 69, 129, 2]], 1.0);
        assert_eq!(p[[0, 70, 0, 0]], 0.0);
    }
}
