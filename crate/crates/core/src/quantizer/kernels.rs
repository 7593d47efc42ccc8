//! Integer-only layer kernels. Everything between input quantization and
//! output dequantization runs through this file, which must stay free of
//! floating-point types (a unit test audits the source).

use crate::netgraph::ops::ConvGeometry;
use crate::quant::{requantize, QMAX, QMIN};

/// Q31 fixed-point rescale factor: `multiplier * 2^(-31 - shift)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Requant {
    pub multiplier: i32,
    pub shift: i32,
}

/// Largest fan-in whose worst-case accumulator fits in i32:
/// 255 * 127 * fan_in < 2^31.
pub const MAX_FAN_IN: usize = (i32::MAX as usize) / (255 * 127);

#[inline]
fn finish(acc: i32, rq: Requant, out_zp: i32, relu: bool) -> i8 {
    let q = requantize(acc, rq.multiplier, rq.shift, out_zp);
    if relu {
        q.max(out_zp.clamp(QMIN, QMAX) as i8)
    } else {
        q
    }
}

/// Int8 convolution: `acc = bias + Σ (x - input_zp) * w`, then requantized.
/// Padded taps contribute nothing (they encode real zero).
#[allow(clippy::too_many_arguments)]
pub fn conv2d(
    g: &ConvGeometry,
    input: &[i8],
    input_zp: i32,
    weights: &[i8],
    bias: &[i32],
    rq: Requant,
    out_zp: i32,
    relu: bool,
) -> Vec<i8> {
    let mut out = vec![0i8; g.out_h * g.out_w * g.out_c];
    let mut acc = vec![0i32; g.out_c];
    for oy in 0..g.out_h {
        for ox in 0..g.out_w {
            acc.copy_from_slice(bias);
            for ky in 0..g.kernel {
                let Some(iy) = g.source(oy, ky, g.pad_top, g.in_h) else {
                    continue;
                };
                for kx in 0..g.kernel {
                    let Some(ix) = g.source(ox, kx, g.pad_left, g.in_w) else {
                        continue;
                    };
                    let xs = &input[(iy * g.in_w + ix) * g.in_c..][..g.in_c];
                    let taps = &weights[(ky * g.kernel + kx) * g.in_c * g.out_c..];
                    for (ci, &xq) in xs.iter().enumerate() {
                        let xv = xq as i32 - input_zp;
                        if xv == 0 {
                            continue;
                        }
                        let row = &taps[ci * g.out_c..][..g.out_c];
                        for (a, &w) in acc.iter_mut().zip(row) {
                            *a = a.saturating_add(xv * w as i32);
                        }
                    }
                }
            }
            let dst = &mut out[(oy * g.out_w + ox) * g.out_c..][..g.out_c];
            for (d, &a) in dst.iter_mut().zip(&acc) {
                *d = finish(a, rq, out_zp, relu);
            }
        }
    }
    out
}

/// Int8 matrix-vector product against `[in, out]` weights.
#[allow(clippy::too_many_arguments)]
pub fn dense(
    input: &[i8],
    input_zp: i32,
    weights: &[i8],
    bias: &[i32],
    rq: Requant,
    out_zp: i32,
    relu: bool,
) -> Vec<i8> {
    let n_out = bias.len();
    let mut acc = bias.to_vec();
    for (i, &xq) in input.iter().enumerate() {
        let xv = xq as i32 - input_zp;
        if xv == 0 {
            continue;
        }
        let row = &weights[i * n_out..][..n_out];
        for (a, &w) in acc.iter_mut().zip(row) {
            *a = a.saturating_add(xv * w as i32);
        }
    }
    acc.into_iter().map(|a| finish(a, rq, out_zp, relu)).collect()
}

/// Window maxima over raw codes; the encoding is unchanged because the
/// affine map is monotone.
pub fn maxpool(
    input: &[i8],
    in_w: usize,
    channels: usize,
    pool: usize,
    stride: usize,
    out_h: usize,
    out_w: usize,
) -> Vec<i8> {
    let mut out = vec![i8::MIN; out_h * out_w * channels];
    for oy in 0..out_h {
        for ox in 0..out_w {
            let dst = &mut out[(oy * out_w + ox) * channels..][..channels];
            for py in 0..pool {
                for px in 0..pool {
                    let src = &input[((oy * stride + py) * in_w + ox * stride + px) * channels..][..channels];
                    for (d, &s) in dst.iter_mut().zip(src) {
                        *d = (*d).max(s);
                    }
                }
            }
        }
    }
    out
}
