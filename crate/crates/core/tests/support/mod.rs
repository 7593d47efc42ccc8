//! Straightforward f64 reference implementations used as test oracles.
//! They share no code with the library's forward pass.

#![allow(dead_code)]

use microquant_core::netgraph::{Activation, Architecture, LayerSpec, Padding};

/// Activation pattern of one forward pass: relu signs and pooling winners.
/// Two passes with equal patterns lie on the same smooth piece.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Pattern(pub Vec<u32>);

/// Forward pass in f64 over flat weights laid out tensor by tensor.
/// Returns class probabilities (or raw outputs without a softmax head).
pub fn forward(arch: &Architecture, weights: &[Vec<f64>], input: &[f64], pattern: &mut Pattern) -> Vec<f64> {
    let mut shape = arch.input_shape.clone();
    let mut x = input.to_vec();
    let mut w = 0;
    for layer in &arch.layers {
        match *layer {
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                stride,
                padding,
                activation,
            } => {
                let (h, wd) = (shape[0], shape[1]);
                let (oh, ow, pt, pl) = match padding {
                    Padding::Valid => ((h - kernel) / stride + 1, (wd - kernel) / stride + 1, 0, 0),
                    Padding::Same => {
                        let oh = h.div_ceil(stride);
                        let ow = wd.div_ceil(stride);
                        let th = ((oh - 1) * stride + kernel).saturating_sub(h);
                        let tw = ((ow - 1) * stride + kernel).saturating_sub(wd);
                        (oh, ow, th / 2, tw / 2)
                    }
                };
                let k = &weights[w];
                let b = &weights[w + 1];
                w += 2;
                let mut out = vec![0.0; oh * ow * out_channels];
                for oy in 0..oh {
                    for ox in 0..ow {
                        for co in 0..out_channels {
                            let mut s = b[co];
                            for ky in 0..kernel {
                                for kx in 0..kernel {
                                    let iy = (oy * stride + ky) as isize - pt as isize;
                                    let ix = (ox * stride + kx) as isize - pl as isize;
                                    if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                        continue;
                                    }
                                    for ci in 0..in_channels {
                                        let xv = x[(iy as usize * wd + ix as usize) * in_channels + ci];
                                        let kv = k[((ky * kernel + kx) * in_channels + ci) * out_channels + co];
                                        s += xv * kv;
                                    }
                                }
                            }
                            out[(oy * ow + ox) * out_channels + co] = s;
                        }
                    }
                }
                x = activate(out, activation, pattern);
                shape = vec![oh, ow, out_channels];
            }
            LayerSpec::MaxPool2d { pool, stride } => {
                let (h, wd, c) = (shape[0], shape[1], shape[2]);
                let (oh, ow) = ((h - pool) / stride + 1, (wd - pool) / stride + 1);
                let mut out = vec![0.0; oh * ow * c];
                for oy in 0..oh {
                    for ox in 0..ow {
                        for ch in 0..c {
                            let mut best = f64::NEG_INFINITY;
                            let mut at = 0;
                            for py in 0..pool {
                                for px in 0..pool {
                                    let v = x[((oy * stride + py) * wd + ox * stride + px) * c + ch];
                                    if v > best {
                                        best = v;
                                        at = (py * pool + px) as u32;
                                    }
                                }
                            }
                            pattern.0.push(at);
                            out[(oy * ow + ox) * c + ch] = best;
                        }
                    }
                }
                x = out;
                shape = vec![oh, ow, c];
            }
            LayerSpec::Flatten => {
                shape = vec![x.len()];
            }
            LayerSpec::Dense {
                in_features,
                out_features,
                activation,
            } => {
                let k = &weights[w];
                let b = &weights[w + 1];
                w += 2;
                let out = (0..out_features)
                    .map(|o| b[o] + (0..in_features).map(|i| x[i] * k[i * out_features + o]).sum::<f64>())
                    .collect();
                x = activate(out, activation, pattern);
                shape = vec![out_features];
            }
        }
    }
    x
}

fn activate(mut v: Vec<f64>, a: Activation, pattern: &mut Pattern) -> Vec<f64> {
    match a {
        Activation::None => {}
        Activation::Relu => {
            for x in &mut v {
                pattern.0.push((*x > 0.0) as u32);
                *x = x.max(0.0);
            }
        }
        Activation::Softmax => {
            let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let s: f64 = v.iter().map(|x| (x - m).exp()).sum();
            for x in &mut v {
                *x = (*x - m).exp() / s;
            }
        }
    }
    v
}

/// Mean cross-entropy of a batch under the f64 oracle.
pub fn batch_loss(
    arch: &Architecture,
    weights: &[Vec<f64>],
    inputs: &[Vec<f64>],
    labels: &[usize],
    pattern: &mut Pattern,
) -> f64 {
    let total: f64 = inputs
        .iter()
        .zip(labels)
        .map(|(x, &l)| -forward(arch, weights, x, pattern)[l].ln())
        .sum();
    total / inputs.len() as f64
}

/// Mean of each `fy × fx` block, rounded half up.
pub fn block_means(pixels: &[u8], w: usize, h: usize, fx: usize, fy: usize) -> Vec<u8> {
    let (ow, oh) = (w / fx, h / fy);
    let n = (fx * fy) as u32;
    let mut out = Vec::with_capacity(ow * oh);
    for by in 0..oh {
        for bx in 0..ow {
            let mut s = 0u32;
            for y in 0..fy {
                for x in 0..fx {
                    s += pixels[(by * fy + y) * w + bx * fx + x] as u32;
                }
            }
            out.push(((2 * s + n) / (2 * n)) as u8);
        }
    }
    out
}
