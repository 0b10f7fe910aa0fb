use ndarray::{ArrayD, IxDyn};

use super::Scalar;

/// A trainable tensor and its accumulated gradient.
#[derive(Clone, Debug)]
pub struct Param<T> {
    pub value: ArrayD<T>,
    pub grad: ArrayD<T>,
}

impl<T: Scalar> Param<T> {
    pub fn new(value: ArrayD<T>) -> Self {
        let grad = ArrayD::zeros(value.raw_dim());
        Self { value, grad }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::new(ArrayD::zeros(IxDyn(shape)))
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(T::zero());
    }
}

/// What a visitor sees for each named tensor in a model.
pub enum ParamSlot<'a, T> {
    Trainable(&'a mut Param<T>),
    /// Non-trainable state that still belongs in checkpoints (batch-norm running stats).
    Buffer(&'a mut ArrayD<T>),
}

impl<T> ParamSlot<'_, T> {
    pub fn value(&self) -> &ArrayD<T> {
        match self {
            ParamSlot::Trainable(p) => &p.value,
            ParamSlot::Buffer(b) => b,
        }
    }

    pub fn value_mut(&mut self) -> &mut ArrayD<T> {
        match self {
            ParamSlot::Trainable(p) => &mut p.value,
            ParamSlot::Buffer(b) => b,
        }
    }
}

/// Callback used to walk every named tensor in a fixed order.
pub type Visitor<'v, T> = dyn FnMut(&str, ParamSlot<'_, T>) + 'v;

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}
