use ndarray::Array4;
use rand::Rng;

use super::ModelConfig;
use crate::error::{Error, Result};
use crate::nn::{Conv2d, Relu, Scalar, Upsample2x, Visitor};

/// Single stride-8 feature map `[N, H, W, f_dim]`.
#[derive(Clone, Debug)]
pub struct DenseFeatureMap<T>(pub Array4<T>);

/// conv3x3 + ReLU, optionally followed by 2x bilinear upsampling.
#[derive(Clone, Debug)]
struct ConvRelu<T> {
    conv: Conv2d<T>,
    relu: Relu<T>,
    up: Option<Upsample2x>,
}

impl<T: Scalar> ConvRelu<T> {
    fn new<R: Rng + ?Sized>(f: usize, upsample: bool, std: f64, rng: &mut R) -> Self {
        Self {
            conv: Conv2d::new(f, f, 3, 1, std, rng),
            relu: Relu::new(),
            up: upsample.then(Upsample2x::new),
        }
    }

    fn forward(&mut self, x: &Array4<T>) -> Array4<T> {
        let y = self.relu.forward(self.conv.forward(x));
        match &mut self.up {
            Some(up) => up.forward(&y),
            None => y,
        }
    }

    fn backward(&mut self, dy: Array4<T>) -> Array4<T> {
        let d = match &mut self.up {
            Some(up) => up.backward(&dy),
            None => dy,
        };
        self.conv.backward(&self.relu.backward(d))
    }
}

/// `S = S3 + S4 + S5` where S3 is conv+ReLU on P3, S4 one upsampling step on
/// P4 and S5 two upsampling steps on P5.
#[derive(Clone, Debug)]
pub struct FpnMerge<T> {
    s3: ConvRelu<T>,
    s4: ConvRelu<T>,
    s5a: ConvRelu<T>,
    s5b: ConvRelu<T>,
}

impl<T: Scalar> FpnMerge<T> {
    pub fn new<R: Rng + ?Sized>(cfg: &ModelConfig, rng: &mut R) -> Self {
        let (f, std) = (cfg.f_dim, cfg.init_std);
        Self {
            s3: ConvRelu::new(f, false, std, rng),
            s4: ConvRelu::new(f, true, std, rng),
            s5a: ConvRelu::new(f, true, std, rng),
            s5b: ConvRelu::new(f, true, std, rng),
        }
    }

    /// The three branch outputs before summation.
    pub fn branches(
        &mut self,
        p3: &Array4<T>,
        p4: &Array4<T>,
        p5: &Array4<T>,
    ) -> Result<[Array4<T>; 3]> {
        let s3 = self.s3.forward(p3);
        let s4 = self.s4.forward(p4);
        let s5 = self.s5b.forward(&self.s5a.forward(p5));
        if s3.dim() != s4.dim() || s3.dim() != s5.dim() {
            return Err(Error::Shape(format!(
                "fpn branches disagree: S3 {:?}, S4 {:?}, S5 {:?}",
                s3.dim(),
                s4.dim(),
                s5.dim()
            )));
        }
        Ok([s3, s4, s5])
    }

    pub fn forward(
        &mut self,
        p3: &Array4<T>,
        p4: &Array4<T>,
        p5: &Array4<T>,
    ) -> Result<DenseFeatureMap<T>> {
        let [s3, s4, s5] = self.branches(p3, p4, p5)?;
        Ok(DenseFeatureMap(s3 + &s4 + &s5))
    }

    /// Returns gradients for `(P3, P4, P5)`.
    pub fn backward(&mut self, d_s: &Array4<T>) -> (Array4<T>, Array4<T>, Array4<T>) {
        let d3 = self.s3.backward(d_s.clone());
        let d4 = self.s4.backward(d_s.clone());
        let d5 = self.s5a.backward(self.s5b.backward(d_s.clone()));
        (d3, d4, d5)
    }

    pub fn visit(&mut self, prefix: &str, f: &mut Visitor<'_, T>) {
        self.s3.conv.visit(&format!("{prefix}.s3"), f);
        self.s4.conv.visit(&format!("{prefix}.s4"), f);
        self.s5a.conv.visit(&format!("{prefix}.s5a"), f);
        self.s5b.conv.visit(&format!("{prefix}.s5b"), f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cfg() -> ModelConfig {
        ModelConfig {
            f_dim: 4,
            init_std: 0.3,
            ..Default::default()
        }
    }

    fn rand4(d: (usize, usize, usize, usize), rng: &mut ChaCha8Rng) -> Array4<f64> {
        Array4::from_shape_fn(d, |_| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn output_has_p3_resolution() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut fpn = FpnMerge::<f32>::new(&cfg(), &mut rng);
        let s = fpn
            .forward(
                &Array4::zeros((1, 64, 128, 4)),
                &Array4::zeros((1, 32, 64, 4)),
                &Array4::zeros((1, 16, 32, 4)),
            )
            .unwrap();
        assert_eq!(s.0.dim(), (1, 64, 128, 4));
    }

    #[test]
    fn zero_upper_branches_leave_s3_bitwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut fpn = FpnMerge::<f64>::new(&cfg(), &mut rng);
        let p3 = rand4((1, 8, 8, 4), &mut rng);
        let p4 = rand4((1, 4, 4, 4), &mut rng);
        let p5 = rand4((1, 2, 2, 4), &mut rng);
        let [s3, mut s4, mut s5] = fpn.branches(&p3, &p4, &p5).unwrap();
        s4.fill(0.0);
        s5.fill(0.0);
        let s = s3.clone() + &s4 + &s5;
        assert_eq!(s, s3);
    }

    #[test]
    fn sum_matches_elementwise_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut fpn = FpnMerge::<f64>::new(&cfg(), &mut rng);
        let p3 = rand4((2, 8, 8, 4), &mut rng);
        let p4 = rand4((2, 4, 4, 4), &mut rng);
        let p5 = rand4((2, 2, 2, 4), &mut rng);
        let [s3, s4, s5] = fpn.branches(&p3, &p4, &p5).unwrap();
        let s = fpn.forward(&p3, &p4, &p5).unwrap().0;
        for (idx, &v) in s.indexed_iter() {
            let expect = s3[idx] + s4[idx] + s5[idx];
            assert_eq!(v, expect);
        }
    }

    #[test]
    fn mismatched_levels_are_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut fpn = FpnMerge::<f32>::new(&cfg(), &mut rng);
        let r = fpn.forward(
            &Array4::zeros((1, 8, 8, 4)),
            &Array4::zeros((1, 3, 4, 4)),
            &Array4::zeros((1, 2, 2, 4)),
        );
        assert!(matches!(r, Err(Error::Shape(_))));
    }
}
