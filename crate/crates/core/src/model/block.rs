use ndarray::Array4;
use rand::Rng;

use crate::nn::{BatchNorm, Conv2d, Relu, Scalar, Visitor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BlockOrder {
    /// conv, batch-norm, ReLU (backbone).
    ConvBnRelu,
    /// conv, ReLU, batch-norm (panoptic head).
    ConvReluBn,
}

/// A 3x3 convolution with batch norm and ReLU in either order.
#[derive(Clone, Debug)]
pub struct ConvBlock<T> {
    pub conv: Conv2d<T>,
    pub bn: BatchNorm<T>,
    relu: Relu<T>,
    order: BlockOrder,
}

impl<T: Scalar> ConvBlock<T> {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        c_in: usize,
        c_out: usize,
        stride: usize,
        order: BlockOrder,
        init_std: f64,
        bn_momentum: f64,
        rng: &mut R,
    ) -> Self {
        Self {
            conv: Conv2d::new(c_in, c_out, 3, stride, init_std, rng),
            bn: BatchNorm::new(c_out, bn_momentum),
            relu: Relu::new(),
            order,
        }
    }

    pub fn forward(&mut self, x: &Array4<T>, train: bool) -> Array4<T> {
        let y = self.conv.forward(x);
        match self.order {
            BlockOrder::ConvBnRelu => {
                let y = self.bn.forward(&y, train);
                self.relu.forward(y)
            }
            BlockOrder::ConvReluBn => {
                let y = self.relu.forward(y);
                self.bn.forward(&y, train)
            }
        }
    }

    pub fn backward(&mut self, dy: Array4<T>) -> Array4<T> {
        let d = match self.order {
            BlockOrder::ConvBnRelu => {
                let d = self.relu.backward(dy);
                self.bn.backward(&d)
            }
            BlockOrder::ConvReluBn => {
                let d = self.bn.backward(&dy);
                self.relu.backward(d)
            }
        };
        self.conv.backward(&d)
    }

    pub fn visit(&mut self, prefix: &str, f: &mut Visitor<'_, T>) {
        self.conv.visit(&format!("{prefix}.conv"), f);
        self.bn.visit(&format!("{prefix}.bn"), f);
    }
}
