use ndarray::{concatenate, s, Array4, Axis};
use rand::Rng;

use super::block::{BlockOrder, ConvBlock};
use super::fpn::DenseFeatureMap;
use super::ModelConfig;
use crate::error::{Error, Result};
use crate::nn::{Conv2d, Scalar, Visitor};

/// Raw head output `[N, H, W, n_att + n_stuff + 2]`.
///
/// Channels `0..n_att` are instance slots, then one channel per stuff class,
/// then "unmatched things" and "unlabeled".
#[derive(Clone, Debug)]
pub struct PanopticLogits<T> {
    pub tensor: Array4<T>,
    pub n_att: usize,
    pub n_stuff: usize,
}

impl<T> PanopticLogits<T> {
    pub fn n_out(&self) -> usize {
        self.tensor.dim().3
    }
}

/// Merge conv over `[masks, features]`, four more conv-ReLU-BN layers and a
/// 1x1 classifier.
#[derive(Clone, Debug)]
pub struct PanopticHead<T> {
    merge: ConvBlock<T>,
    tower: Vec<ConvBlock<T>>,
    out: Conv2d<T>,
    n_att: usize,
    n_stuff: usize,
    f_dim: usize,
}

impl<T: Scalar> PanopticHead<T> {
    pub fn new<R: Rng + ?Sized>(cfg: &ModelConfig, rng: &mut R) -> Self {
        let block = |c_in, rng: &mut R| {
            ConvBlock::new(
                c_in,
                cfg.head_width,
                1,
                BlockOrder::ConvReluBn,
                cfg.init_std,
                cfg.bn_momentum,
                rng,
            )
        };
        let merge = block(cfg.n_att + cfg.f_dim, rng);
        let tower = (0..4).map(|_| block(cfg.head_width, rng)).collect();
        Self {
            merge,
            tower,
            out: Conv2d::new(cfg.head_width, cfg.n_out(), 1, 1, cfg.init_std, rng),
            n_att: cfg.n_att,
            n_stuff: cfg.n_stuff,
            f_dim: cfg.f_dim,
        }
    }

    /// `masks` is `[N, H, W, n_att]`, already scaled and shuffled.
    pub fn forward(
        &mut self,
        features: &DenseFeatureMap<T>,
        masks: &Array4<T>,
        train: bool,
    ) -> Result<PanopticLogits<T>> {
        let s = &features.0;
        if masks.dim().3 != self.n_att {
            return Err(Error::Shape(format!(
                "attention stack has {} channels, head expects n_att = {}",
                masks.dim().3,
                self.n_att
            )));
        }
        if s.dim().3 != self.f_dim {
            return Err(Error::Shape(format!(
                "feature map has {} channels, head expects {}",
                s.dim().3,
                self.f_dim
            )));
        }
        let (n, h, w, _) = s.dim();
        if masks.dim().0 != n || masks.dim().1 != h || masks.dim().2 != w {
            return Err(Error::Shape(format!(
                "masks {:?} not aligned with features {:?}",
                masks.dim(),
                s.dim()
            )));
        }
        let x = concatenate(Axis(3), &[masks.view(), s.view()]).expect("aligned");
        let mut y = self.merge.forward(&x, train);
        for block in &mut self.tower {
            y = block.forward(&y, train);
        }
        let tensor = self.out.forward(&y);
        Ok(PanopticLogits {
            tensor,
            n_att: self.n_att,
            n_stuff: self.n_stuff,
        })
    }

    /// Returns gradients w.r.t. `(features, masks)`.
    pub fn backward(&mut self, d_logits: &Array4<T>) -> (Array4<T>, Array4<T>) {
        let mut d = self.out.backward(d_logits);
        for block in self.tower.iter_mut().rev() {
            d = block.backward(d);
        }
        let d = self.merge.backward(d);
        let d_masks = d.slice(s![.., .., .., ..self.n_att]).to_owned();
        let d_features = d.slice(s![.., .., .., self.n_att..]).to_owned();
        (d_features, d_masks)
    }

    pub fn visit(&mut self, prefix: &str, f: &mut Visitor<'_, T>) {
        self.merge.visit(&format!("{prefix}.merge"), f);
        for (i, block) in self.tower.iter_mut().enumerate() {
            block.visit(&format!("{prefix}.tower{i}"), f);
        }
        self.out.visit(&format!("{prefix}.out"), f);
    }
}
