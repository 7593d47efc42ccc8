//! Float32 layer primitives on `[h, w, c]` feature maps.

use super::Padding;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Output length and leading pad along one spatial axis. Same padding splits
/// the total pad evenly, the odd pixel going to the bottom/right.
pub fn window_geometry(
    input: usize,
    kernel: usize,
    stride: usize,
    padding: Padding,
) -> std::result::Result<(usize, usize), String> {
    match padding {
        Padding::Same => {
            let out = input.div_ceil(stride);
            let total = ((out - 1) * stride + kernel).saturating_sub(input);
            Ok((out, total / 2))
        }
        Padding::Valid => {
            if input < kernel {
                return Err(format!("window {kernel} larger than input {input}"));
            }
            Ok(((input - kernel) / stride + 1, 0))
        }
    }
}

pub(crate) fn hwc(t: &Tensor) -> Result<[usize; 3]> {
    match *t.shape() {
        [h, w, c] => Ok([h, w, c]),
        _ => Err(Error::Shape(format!(
            "expected an [h, w, c] tensor, got {:?}",
            t.shape()
        ))),
    }
}

/// Geometry shared by the float and integer convolution kernels.
#[derive(Debug, Clone, Copy)]
pub struct ConvGeometry {
    pub in_h: usize,
    pub in_w: usize,
    pub in_c: usize,
    pub out_h: usize,
    pub out_w: usize,
    pub out_c: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad_top: usize,
    pub pad_left: usize,
}

impl ConvGeometry {
    pub fn new(
        input: [usize; 3],
        kernel_shape: &[usize],
        stride: usize,
        padding: Padding,
    ) -> Result<Self> {
        let [in_h, in_w, in_c] = input;
        let &[kh, kw, kc, out_c] = kernel_shape else {
            return Err(Error::Shape(format!(
                "conv kernel must be [k, k, in, out], got {kernel_shape:?}"
            )));
        };
        if kh != kw {
            return Err(Error::Shape(format!("conv kernel must be square, got {kh}x{kw}")));
        }
        if kc != in_c {
            return Err(Error::Shape(format!(
                "conv kernel expects {kc} input channels, input has {in_c}"
            )));
        }
        if stride == 0 {
            return Err(Error::InvalidArgument("stride must be positive".into()));
        }
        let (out_h, pad_top) = window_geometry(in_h, kh, stride, padding).map_err(Error::Shape)?;
        let (out_w, pad_left) = window_geometry(in_w, kw, stride, padding).map_err(Error::Shape)?;
        Ok(Self {
            in_h,
            in_w,
            in_c,
            out_h,
            out_w,
            out_c,
            kernel: kh,
            stride,
            pad_top,
            pad_left,
        })
    }

    /// Source row/column for output position `o` and kernel tap `k`, or
    /// `None` when the tap lands in the zero padding.
    #[inline]
    pub fn source(&self, o: usize, k: usize, pad: usize, len: usize) -> Option<usize> {
        let i = (o * self.stride + k) as isize - pad as isize;
        (i >= 0 && (i as usize) < len).then_some(i as usize)
    }
}

/// 2-D cross-correlation plus bias.
pub fn conv2d(
    input: &Tensor,
    kernel: &Tensor,
    bias: &Tensor,
    stride: usize,
    padding: Padding,
) -> Result<Tensor> {
    let g = ConvGeometry::new(hwc(input)?, kernel.shape(), stride, padding)?;
    if bias.shape() != [g.out_c] {
        return Err(Error::Shape(format!(
            "conv bias should be [{}], got {:?}",
            g.out_c,
            bias.shape()
        )));
    }
    let x = input.data();
    let k = kernel.data();
    let mut out = vec![0f32; g.out_h * g.out_w * g.out_c];
    for oy in 0..g.out_h {
        for ox in 0..g.out_w {
            let acc = &mut out[(oy * g.out_w + ox) * g.out_c..][..g.out_c];
            acc.copy_from_slice(bias.data());
            for ky in 0..g.kernel {
                let Some(iy) = g.source(oy, ky, g.pad_top, g.in_h) else {
                    continue;
                };
                for kx in 0..g.kernel {
                    let Some(ix) = g.source(ox, kx, g.pad_left, g.in_w) else {
                        continue;
                    };
                    let xs = &x[(iy * g.in_w + ix) * g.in_c..][..g.in_c];
                    let taps = &k[(ky * g.kernel + kx) * g.in_c * g.out_c..];
                    for (ci, &xv) in xs.iter().enumerate() {
                        let row = &taps[ci * g.out_c..][..g.out_c];
                        for (a, &w) in acc.iter_mut().zip(row) {
                            *a += xv * w;
                        }
                    }
                }
            }
        }
    }
    Tensor::new(vec![g.out_h, g.out_w, g.out_c], out)
}

/// Valid-padding max pooling geometry: `(out_h, out_w)`.
pub fn pool_geometry(h: usize, w: usize, pool: usize, stride: usize) -> Result<(usize, usize)> {
    if pool == 0 || stride == 0 {
        return Err(Error::InvalidArgument("pool and stride must be positive".into()));
    }
    let (oh, _) = window_geometry(h, pool, stride, Padding::Valid).map_err(Error::Shape)?;
    let (ow, _) = window_geometry(w, pool, stride, Padding::Valid).map_err(Error::Shape)?;
    Ok((oh, ow))
}

pub fn maxpool2d(input: &Tensor, pool: usize, stride: usize) -> Result<Tensor> {
    let [h, w, c] = hwc(input)?;
    let (oh, ow) = pool_geometry(h, w, pool, stride)?;
    let x = input.data();
    let mut out = vec![f32::NEG_INFINITY; oh * ow * c];
    for oy in 0..oh {
        for ox in 0..ow {
            let dst = &mut out[(oy * ow + ox) * c..][..c];
            for py in 0..pool {
                for px in 0..pool {
                    let src = &x[((oy * stride + py) * w + ox * stride + px) * c..][..c];
                    for (d, &s) in dst.iter_mut().zip(src) {
                        if s > *d {
                            *d = s;
                        }
                    }
                }
            }
        }
    }
    Tensor::new(vec![oh, ow, c], out)
}

/// `x · W + b` for a flat input `x: [in]` and `W: [in, out]`.
pub fn dense(input: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let &[n_in, n_out] = weights.shape() else {
        return Err(Error::Shape(format!(
            "dense weights must be [in, out], got {:?}",
            weights.shape()
        )));
    };
    if input.shape() != [n_in] || bias.shape() != [n_out] {
        return Err(Error::Shape(format!(
            "dense [{n_in}, {n_out}] got input {:?} and bias {:?}",
            input.shape(),
            bias.shape()
        )));
    }
    let mut out = bias.data().to_vec();
    for (i, &xv) in input.data().iter().enumerate() {
        let row = &weights.data()[i * n_out..][..n_out];
        for (o, &w) in out.iter_mut().zip(row) {
            *o += xv * w;
        }
    }
    Tensor::new(vec![n_out], out)
}

pub fn relu(x: f32) -> f32 {
    x.max(0.0)
}

pub fn relu_in_place(values: &mut [f32]) {
    for v in values {
        *v = relu(*v);
    }
}

/// Numerically shifted softmax.
pub fn softmax_in_place(values: &mut [f32]) {
    let max = values.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let mut sum = 0f64;
    for v in values.iter_mut() {
        let e = ((*v - max) as f64).exp();
        *v = e as f32;
        sum += e;
    }
    for v in values.iter_mut() {
        *v = (*v as f64 / sum) as f32;
    }
}

pub fn softmax(values: &[f32]) -> Vec<f32> {
    let mut out = values.to_vec();
    softmax_in_place(&mut out);
    out
}
