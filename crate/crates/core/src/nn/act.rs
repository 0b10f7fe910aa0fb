use ndarray::{Array4, Zip};

use super::Scalar;

#[derive(Clone, Debug, Default)]
pub struct Relu<T> {
    out: Option<Array4<T>>,
}

impl<T: Scalar> Relu<T> {
    pub fn new() -> Self {
        Self { out: None }
    }

    pub fn forward(&mut self, x: Array4<T>) -> Array4<T> {
        let y = x.mapv_into(|v| if v > T::zero() { v } else { T::zero() });
        self.out = Some(y.clone());
        y
    }

    pub fn backward(&mut self, mut dy: Array4<T>) -> Array4<T> {
        let out = self.out.as_ref().expect("relu backward before forward");
        Zip::from(&mut dy).and(out).for_each(|g, &o| {
            if o <= T::zero() {
                *g = T::zero();
            }
        });
        dy
    }
}
