use ndarray::Array4;

use super::{cast, Scalar};

/// Interpolation taps along one axis, half-pixel-center convention:
/// output index `o` samples input coordinate `(o + 0.5) * in / out - 0.5`,
/// clamped to the valid range.
#[derive(Clone, Debug)]
pub struct BilinearAxis {
    pub lo: Vec<usize>,
    pub hi: Vec<usize>,
    pub w_hi: Vec<f64>,
}

impl BilinearAxis {
    pub fn new(input: usize, output: usize) -> Self {
        assert!(input > 0 && output > 0);
        let scale = input as f64 / output as f64;
        let mut lo = Vec::with_capacity(output);
        let mut hi = Vec::with_capacity(output);
        let mut w_hi = Vec::with_capacity(output);
        for o in 0..output {
            let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(input - 1);
            let i1 = (i0 + 1).min(input - 1);
            let frac = if i1 == i0 { 0.0 } else { src - i0 as f64 };
            lo.push(i0);
            hi.push(i1);
            w_hi.push(frac);
        }
        Self { lo, hi, w_hi }
    }
}

/// Bilinear resize of an NHWC tensor.
pub fn resize_bilinear<T: Scalar>(x: &Array4<T>, out_h: usize, out_w: usize) -> Array4<T> {
    let (n, h, w, c) = x.dim();
    let ay = BilinearAxis::new(h, out_h);
    let ax = BilinearAxis::new(w, out_w);
    let x = x.as_standard_layout();
    let src = x.as_slice().unwrap();
    let mut out = vec![T::zero(); n * out_h * out_w * c];
    for b in 0..n {
        for oy in 0..out_h {
            let (y0, y1) = (ay.lo[oy], ay.hi[oy]);
            let wy1: T = cast(ay.w_hi[oy]);
            let wy0 = T::one() - wy1;
            for ox in 0..out_w {
                let (x0, x1) = (ax.lo[ox], ax.hi[ox]);
                let wx1: T = cast(ax.w_hi[ox]);
                let wx0 = T::one() - wx1;
                let taps = [
                    (((b * h + y0) * w + x0) * c, wy0 * wx0),
                    (((b * h + y0) * w + x1) * c, wy0 * wx1),
                    (((b * h + y1) * w + x0) * c, wy1 * wx0),
                    (((b * h + y1) * w + x1) * c, wy1 * wx1),
                ];
                let d0 = ((b * out_h + oy) * out_w + ox) * c;
                let dst = &mut out[d0..d0 + c];
                for &(s0, wt) in &taps {
                    if wt == T::zero() {
                        continue;
                    }
                    for (d, &v) in dst.iter_mut().zip(&src[s0..s0 + c]) {
                        *d += wt * v;
                    }
                }
            }
        }
    }
    Array4::from_shape_vec((n, out_h, out_w, c), out).unwrap()
}

/// Adjoint of [`resize_bilinear`]: scatters output gradients back to the input grid.
pub fn resize_bilinear_backward<T: Scalar>(dy: &Array4<T>, in_h: usize, in_w: usize) -> Array4<T> {
    let (n, out_h, out_w, c) = dy.dim();
    let ay = BilinearAxis::new(in_h, out_h);
    let ax = BilinearAxis::new(in_w, out_w);
    let dy = dy.as_standard_layout();
    let src = dy.as_slice().unwrap();
    let mut dx = vec![T::zero(); n * in_h * in_w * c];
    for b in 0..n {
        for oy in 0..out_h {
            let (y0, y1) = (ay.lo[oy], ay.hi[oy]);
            let wy1: T = cast(ay.w_hi[oy]);
            let wy0 = T::one() - wy1;
            for ox in 0..out_w {
                let (x0, x1) = (ax.lo[ox], ax.hi[ox]);
                let wx1: T = cast(ax.w_hi[ox]);
                let wx0 = T::one() - wx1;
                let s0 = ((b * out_h + oy) * out_w + ox) * c;
                let g = &src[s0..s0 + c];
                for &(yy, xx, wt) in &[
                    (y0, x0, wy0 * wx0),
                    (y0, x1, wy0 * wx1),
                    (y1, x0, wy1 * wx0),
                    (y1, x1, wy1 * wx1),
                ] {
                    if wt == T::zero() {
                        continue;
                    }
                    let d0 = ((b * in_h + yy) * in_w + xx) * c;
                    for (d, &v) in dx[d0..d0 + c].iter_mut().zip(g) {
                        *d += wt * v;
                    }
                }
            }
        }
    }
    Array4::from_shape_vec((n, in_h, in_w, c), dx).unwrap()
}

/// 2x bilinear upsampling layer.
#[derive(Clone, Debug, Default)]
pub struct Upsample2x {
    in_hw: Option<(usize, usize)>,
}

impl Upsample2x {
    pub fn new() -> Self {
        Self { in_hw: None }
    }

    pub fn forward<T: Scalar>(&mut self, x: &Array4<T>) -> Array4<T> {
        let (_, h, w, _) = x.dim();
        self.in_hw = Some((h, w));
        resize_bilinear(x, 2 * h, 2 * w)
    }

    pub fn backward<T: Scalar>(&mut self, dy: &Array4<T>) -> Array4<T> {
        let (h, w) = self.in_hw.take().expect("upsample backward before forward");
        resize_bilinear_backward(dy, h, w)
    }
}
