//! Minimal NHWC layer set with hand-written backward passes.
//!
//! Every layer caches what its backward pass needs during `forward` and
//! accumulates parameter gradients in `backward`. Tensors are `[N, H, W, C]`.

mod act;
mod conv;
mod norm;
mod param;
mod resize;

pub use act::Relu;
pub use conv::Conv2d;
pub use norm::BatchNorm;
pub use param::{Param, ParamSlot, Visitor};
pub use resize::{resize_bilinear, resize_bilinear_backward, BilinearAxis, Upsample2x};

use ndarray::NdFloat;

/// Floating point element type the layers are generic over.
pub trait Scalar: NdFloat + Default + num_traits::FromPrimitive {}

impl Scalar for f32 {}
impl Scalar for f64 {}

#[inline]
pub(crate) fn cast<T: Scalar>(x: f64) -> T {
    T::from(x).expect("finite constant")
}
