use ndarray::{Array1, Array2, Array4, ArrayView2, Axis, IxDyn};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::param::join;
use super::{cast, Param, ParamSlot, Scalar, Visitor};

/// Square-kernel 2-D convolution with zero padding of `kernel / 2`.
///
/// Weights are stored `[k, k, c_in, c_out]` so that a contiguous reshape to
/// `[k * k * c_in, c_out]` lines up with the im2col column order.
#[derive(Clone, Debug)]
pub struct Conv2d<T> {
    pub weight: Param<T>,
    pub bias: Param<T>,
    kernel: usize,
    stride: usize,
    c_in: usize,
    c_out: usize,
    cache: Option<ConvCache<T>>,
}

#[derive(Clone, Debug)]
struct ConvCache<T> {
    cols: Array2<T>,
    in_shape: (usize, usize, usize, usize),
    out_hw: (usize, usize),
}

impl<T: Scalar> Conv2d<T> {
    /// Truncated-normal weights (std `std`, cut at two sigma) and zero bias.
    pub fn new<R: Rng + ?Sized>(
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        std: f64,
        rng: &mut R,
    ) -> Self {
        assert!(kernel % 2 == 1, "odd kernels only");
        assert!(stride >= 1);
        let n = kernel * kernel * c_in * c_out;
        let mut values = Vec::with_capacity(n);
        while values.len() < n {
            let z: f64 = StandardNormal.sample(rng);
            if z.abs() <= 2.0 {
                values.push(cast::<T>(z * std));
            }
        }
        let weight = ndarray::ArrayD::from_shape_vec(IxDyn(&[kernel, kernel, c_in, c_out]), values)
            .expect("weight shape");
        Self {
            weight: Param::new(weight),
            bias: Param::zeros(&[c_out]),
            kernel,
            stride,
            c_in,
            c_out,
            cache: None,
        }
    }

    pub fn in_channels(&self) -> usize {
        self.c_in
    }

    pub fn out_channels(&self) -> usize {
        self.c_out
    }

    pub fn output_size(&self, h: usize, w: usize) -> (usize, usize) {
        let pad = self.kernel / 2;
        (
            (h + 2 * pad - self.kernel) / self.stride + 1,
            (w + 2 * pad - self.kernel) / self.stride + 1,
        )
    }

    fn weight_matrix(&self) -> ArrayView2<'_, T> {
        self.weight
            .value
            .view()
            .into_shape_with_order((self.kernel * self.kernel * self.c_in, self.c_out))
            .expect("contiguous weight")
    }

    pub fn forward(&mut self, x: &Array4<T>) -> Array4<T> {
        let (n, h, w, c) = x.dim();
        assert_eq!(c, self.c_in, "conv input channels");
        let (ho, wo) = self.output_size(h, w);
        let cols = self.im2col(x, ho, wo);
        let mut y = cols.dot(&self.weight_matrix());
        let bias = self.bias.value.view().into_dimensionality::<ndarray::Ix1>().unwrap();
        y += &bias;
        let y = y
            .into_shape_with_order((n, ho, wo, self.c_out))
            .expect("conv output shape");
        self.cache = Some(ConvCache {
            cols,
            in_shape: (n, h, w, c),
            out_hw: (ho, wo),
        });
        y
    }

    pub fn backward(&mut self, dy: &Array4<T>) -> Array4<T> {
        let cache = self.cache.take().expect("conv backward before forward");
        let (n, h, w, c) = cache.in_shape;
        let (ho, wo) = cache.out_hw;
        assert_eq!(dy.dim(), (n, ho, wo, self.c_out), "conv grad shape");
        let dy2 = dy
            .view()
            .into_shape_with_order((n * ho * wo, self.c_out))
            .expect("contiguous grad");

        let dw = cache.cols.t().dot(&dy2);
        {
            let mut g = self
                .weight
                .grad
                .view_mut()
                .into_shape_with_order((self.kernel * self.kernel * c, self.c_out))
                .unwrap();
            g += &dw;
        }
        let db: Array1<T> = dy2.sum_axis(Axis(0));
        {
            let mut g = self.bias.grad.view_mut().into_dimensionality::<ndarray::Ix1>().unwrap();
            g += &db;
        }

        let dcols = dy2.dot(&self.weight_matrix().t());
        let dx = self.col2im(&dcols, (n, h, w, c), (ho, wo));
        self.cache = None;
        dx
    }

    fn im2col(&self, x: &Array4<T>, ho: usize, wo: usize) -> Array2<T> {
        let (n, h, w, c) = x.dim();
        let k = self.kernel;
        let pad = k / 2;
        let row_len = k * k * c;
        let x = x.as_standard_layout();
        let src = x.as_slice().expect("standard layout");
        let mut cols = vec![T::zero(); n * ho * wo * row_len];
        for b in 0..n {
            for oy in 0..ho {
                for ox in 0..wo {
                    let row = ((b * ho + oy) * wo + ox) * row_len;
                    for ky in 0..k {
                        let iy = (oy * self.stride + ky) as isize - pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kx in 0..k {
                            let ix = (ox * self.stride + kx) as isize - pad as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            let s0 = ((b * h + iy as usize) * w + ix as usize) * c;
                            let d0 = row + (ky * k + kx) * c;
                            cols[d0..d0 + c].copy_from_slice(&src[s0..s0 + c]);
                        }
                    }
                }
            }
        }
        Array2::from_shape_vec((n * ho * wo, row_len), cols).unwrap()
    }

    fn col2im(
        &self,
        dcols: &Array2<T>,
        (n, h, w, c): (usize, usize, usize, usize),
        (ho, wo): (usize, usize),
    ) -> Array4<T> {
        let k = self.kernel;
        let pad = k / 2;
        let row_len = k * k * c;
        let dcols = dcols.as_standard_layout();
        let src = dcols.as_slice().unwrap();
        let mut dx = vec![T::zero(); n * h * w * c];
        for b in 0..n {
            for oy in 0..ho {
                for ox in 0..wo {
                    let row = ((b * ho + oy) * wo + ox) * row_len;
                    for ky in 0..k {
                        let iy = (oy * self.stride + ky) as isize - pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kx in 0..k {
                            let ix = (ox * self.stride + kx) as isize - pad as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            let d0 = ((b * h + iy as usize) * w + ix as usize) * c;
                            let s0 = row + (ky * k + kx) * c;
                            for (d, &g) in dx[d0..d0 + c].iter_mut().zip(&src[s0..s0 + c]) {
                                *d += g;
                            }
                        }
                    }
                }
            }
        }
        Array4::from_shape_vec((n, h, w, c), dx).unwrap()
    }

    pub fn visit(&mut self, prefix: &str, f: &mut Visitor<'_, T>) {
        f(&join(prefix, "weight"), ParamSlot::Trainable(&mut self.weight));
        f(&join(prefix, "bias"), ParamSlot::Trainable(&mut self.bias));
    }
}

/// Naive direct convolution; reference for the im2col path in tests.
#[cfg(test)]
pub(crate) fn conv_direct<T: Scalar>(
    x: &Array4<T>,
    weight: &ndarray::ArrayD<T>,
    bias: &ndarray::ArrayD<T>,
    stride: usize,
) -> Array4<T> {
    let (n, h, w, c) = x.dim();
    let k = weight.shape()[0];
    let co = weight.shape()[3];
    let pad = (k / 2) as isize;
    let ho = (h + 2 * (k / 2) - k) / stride + 1;
    let wo = (w + 2 * (k / 2) - k) / stride + 1;
    let mut y = Array4::zeros((n, ho, wo, co));
    for b in 0..n {
        for oy in 0..ho {
            for ox in 0..wo {
                for o in 0..co {
                    let mut acc = bias[[o]];
                    for ky in 0..k {
                        for kx in 0..k {
                            let iy = (oy * stride + ky) as isize - pad;
                            let ix = (ox * stride + kx) as isize - pad;
                            if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                continue;
                            }
                            for i in 0..c {
                                acc += x[[b, iy as usize, ix as usize, i]] * weight[[ky, kx, i, o]];
                            }
                        }
                    }
                    y[[b, oy, ox, o]] = acc;
                }
            }
        }
    }
    y
}
