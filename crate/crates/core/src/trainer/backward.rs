//! Reverse-mode gradients for the layer vocabulary.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::netgraph::ops::{hwc, pool_geometry, ConvGeometry};
use crate::netgraph::{Activation, LayerSpec, ModelSpec};
use crate::tensor::Tensor;

use super::loss::sample_loss;

/// Loss, correctness and per-weight gradients of one batch.
#[derive(Debug, Clone)]
pub struct BatchGradients {
    /// Mean cross-entropy over the batch.
    pub loss: f64,
    /// Samples whose argmax matched the label.
    pub correct: usize,
    /// One tensor per model weight, same order and shapes.
    pub grads: Vec<Tensor>,
}

/// Gradients of the mean cross-entropy over `inputs` with respect to every
/// weight. The model must end in a softmax layer; its gradient is the fused
/// `(p - y) / batch`.
pub fn backward(model: &ModelSpec, inputs: &[Tensor], labels: &[usize]) -> Result<BatchGradients> {
    if inputs.is_empty() || inputs.len() != labels.len() {
        return Err(Error::Shape(format!(
            "batch has {} inputs and {} labels",
            inputs.len(),
            labels.len()
        )));
    }
    match model.arch.layers.last() {
        Some(l) if l.activation() == Activation::Softmax => {}
        _ => {
            return Err(Error::InvalidArgument(
                "training needs a model whose final layer is softmax".into(),
            ))
        }
    }
    let batch = inputs.len();
    // per-sample work in parallel, reduced below in a fixed order
    let per_sample: Vec<(f64, bool, Vec<Tensor>)> = inputs
        .par_iter()
        .zip(labels.par_iter())
        .map(|(x, &label)| sample_gradients(model, x, label, batch))
        .collect::<Result<_>>()?;

    let mut grads: Vec<Tensor> = model.weights().iter().map(|w| Tensor::zeros(w.shape())).collect();
    let mut loss = 0f64;
    let mut correct = 0;
    for (l, ok, g) in per_sample {
        loss += l;
        correct += ok as usize;
        for (acc, part) in grads.iter_mut().zip(&g) {
            for (a, &p) in acc.data_mut().iter_mut().zip(part.data()) {
                *a += p;
            }
        }
    }
    Ok(BatchGradients {
        loss: loss / batch as f64,
        correct,
        grads,
    })
}

fn sample_gradients(
    model: &ModelSpec,
    input: &Tensor,
    label: usize,
    batch: usize,
) -> Result<(f64, bool, Vec<Tensor>)> {
    let trace = model.forward_trace(input)?;
    let probs = trace.output.data();
    if label >= probs.len() {
        return Err(Error::InvalidArgument(format!(
            "label {label} out of range for {} classes",
            probs.len()
        )));
    }
    let loss = sample_loss(probs, label);
    let correct = trace.output.argmax() == label;

    let mut grad: Vec<f32> = probs.iter().map(|&p| p / batch as f32).collect();
    grad[label] -= 1.0 / batch as f32;

    let weights = model.weights();
    let offsets = model.arch.weight_offsets();
    let mut grads: Vec<Tensor> = weights.iter().map(|w| Tensor::zeros(w.shape())).collect();

    for (index, layer) in model.arch.layers.iter().enumerate().rev() {
        let layer_in = if index == 0 {
            &trace.input
        } else {
            &trace.outputs[index - 1]
        };
        if layer.activation() == Activation::Relu {
            for (g, &y) in grad.iter_mut().zip(trace.outputs[index].data()) {
                if y <= 0.0 {
                    *g = 0.0;
                }
            }
        }
        let need_input_grad = index > 0;
        grad = match *layer {
            LayerSpec::Conv2d {
                stride, padding, ..
            } => {
                let w = offsets[index].expect("conv has weights");
                let g = ConvGeometry::new(hwc(layer_in)?, weights[w].shape(), stride, padding)?;
                let (kernel_grad, rest) = grads[w..].split_at_mut(1);
                conv2d_backward(
                    &g,
                    layer_in.data(),
                    weights[w].data(),
                    &grad,
                    kernel_grad[0].data_mut(),
                    rest[0].data_mut(),
                    need_input_grad,
                )
            }
            LayerSpec::MaxPool2d { pool, stride } => {
                maxpool2d_backward(layer_in, pool, stride, &grad)?
            }
            LayerSpec::Flatten => grad,
            LayerSpec::Dense { .. } => {
                let w = offsets[index].expect("dense has weights");
                let (kernel_grad, rest) = grads[w..].split_at_mut(1);
                dense_backward(
                    layer_in.data(),
                    weights[w].data(),
                    &grad,
                    kernel_grad[0].data_mut(),
                    rest[0].data_mut(),
                    need_input_grad,
                )
            }
        };
    }
    Ok((loss, correct, grads))
}

/// Accumulates kernel and bias gradients; returns the input gradient (empty
/// when `need_input_grad` is false).
fn conv2d_backward(
    g: &ConvGeometry,
    input: &[f32],
    kernel: &[f32],
    grad_out: &[f32],
    grad_kernel: &mut [f32],
    grad_bias: &mut [f32],
    need_input_grad: bool,
) -> Vec<f32> {
    let mut grad_in = if need_input_grad {
        vec![0f32; input.len()]
    } else {
        Vec::new()
    };
    for oy in 0..g.out_h {
        for ox in 0..g.out_w {
            let go = &grad_out[(oy * g.out_w + ox) * g.out_c..][..g.out_c];
            if go.iter().all(|&v| v == 0.0) {
                continue;
            }
            for (b, &v) in grad_bias.iter_mut().zip(go) {
                *b += v;
            }
            for ky in 0..g.kernel {
                let Some(iy) = g.source(oy, ky, g.pad_top, g.in_h) else {
                    continue;
                };
                for kx in 0..g.kernel {
                    let Some(ix) = g.source(ox, kx, g.pad_left, g.in_w) else {
                        continue;
                    };
                    let px = (iy * g.in_w + ix) * g.in_c;
                    let tap = (ky * g.kernel + kx) * g.in_c * g.out_c;
                    for ci in 0..g.in_c {
                        let xv = input[px + ci];
                        let row = tap + ci * g.out_c;
                        let gk = &mut grad_kernel[row..row + g.out_c];
                        for (k, &v) in gk.iter_mut().zip(go) {
                            *k += xv * v;
                        }
                        if need_input_grad {
                            let w = &kernel[row..row + g.out_c];
                            grad_in[px + ci] += w.iter().zip(go).map(|(a, b)| a * b).sum::<f32>();
                        }
                    }
                }
            }
        }
    }
    grad_in
}

/// Routes each window's gradient to its (first) maximum.
fn maxpool2d_backward(input: &Tensor, pool: usize, stride: usize, grad_out: &[f32]) -> Result<Vec<f32>> {
    let [h, w, c] = hwc(input)?;
    let (oh, ow) = pool_geometry(h, w, pool, stride)?;
    let x = input.data();
    let mut grad_in = vec![0f32; x.len()];
    for oy in 0..oh {
        for ox in 0..ow {
            for ch in 0..c {
                let mut best = usize::MAX;
                let mut best_v = f32::NEG_INFINITY;
                for py in 0..pool {
                    for px in 0..pool {
                        let i = ((oy * stride + py) * w + ox * stride + px) * c + ch;
                        if best == usize::MAX || x[i] > best_v {
                            best = i;
                            best_v = x[i];
                        }
                    }
                }
                grad_in[best] += grad_out[(oy * ow + ox) * c + ch];
            }
        }
    }
    Ok(grad_in)
}

fn dense_backward(
    input: &[f32],
    weights: &[f32],
    grad_out: &[f32],
    grad_weights: &mut [f32],
    grad_bias: &mut [f32],
    need_input_grad: bool,
) -> Vec<f32> {
    let n_out = grad_out.len();
    for (b, &g) in grad_bias.iter_mut().zip(grad_out) {
        *b += g;
    }
    let mut grad_in = if need_input_grad {
        vec![0f32; input.len()]
    } else {
        Vec::new()
    };
    for (i, &xv) in input.iter().enumerate() {
        let row = i * n_out;
        if xv != 0.0 {
            for (gw, &g) in grad_weights[row..row + n_out].iter_mut().zip(grad_out) {
                *gw += xv * g;
            }
        }
        if need_input_grad {
            grad_in[i] = weights[row..row + n_out]
                .iter()
                .zip(grad_out)
                .map(|(a, b)| a * b)
                .sum();
        }
    }
    grad_in
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netgraph::Architecture;

    fn softmax_dense(n_in: usize, classes: usize) -> ModelSpec {
        ModelSpec::zeros(Architecture {
            input_shape: vec![n_in],
            layers: vec![LayerSpec::Dense {
                in_features: n_in,
                out_features: classes,
                activation: Activation::Softmax,
            }],
        })
        .unwrap()
    }

    #[test]
    fn zero_weight_dense_has_closed_form_gradient() {
        let m = softmax_dense(3, 4);
        let xs = vec![
            Tensor::new(vec![3], vec![1.0, 2.0, -1.0]).unwrap(),
            Tensor::new(vec![3], vec![0.5, 0.0, 4.0]).unwrap(),
        ];
        let labels = [2, 0];
        let out = backward(&m, &xs, &labels).unwrap();
        // bias gradient: sum over samples of (uniform - y) / batch
        let expected_bias: Vec<f32> = (0..4)
            .map(|c| {
                labels
                    .iter()
                    .map(|&l| (0.25 - (c == l) as i32 as f32) / 2.0)
                    .sum()
            })
            .collect();
        for (a, b) in out.grads[1].data().iter().zip(&expected_bias) {
            assert!((a - b).abs() < 1e-7);
        }
        // weight gradient: x_i * (uniform - y)_c / batch, summed
        for i in 0..3 {
            for c in 0..4 {
                let e: f32 = xs
                    .iter()
                    .zip(&labels)
                    .map(|(x, &l)| x.data()[i] * (0.25 - (c == l) as i32 as f32) / 2.0)
                    .sum();
                assert!((out.grads[0].data()[i * 4 + c] - e).abs() < 1e-6);
            }
        }
        assert!((out.loss - 4f64.ln()).abs() < 1e-6);
    }

    #[test]
    fn duplicated_sample_matches_single() {
        let mut m = ModelSpec::he_uniform(
            Architecture {
                input_shape: vec![5, 5, 1],
                layers: vec![
                    LayerSpec::Conv2d {
                        in_channels: 1,
                        out_channels: 2,
                        kernel: 3,
                        stride: 1,
                        padding: crate::netgraph::Padding::Same,
                        activation: Activation::Relu,
                    },
                    LayerSpec::MaxPool2d { pool: 2, stride: 2 },
                    LayerSpec::Flatten,
                    LayerSpec::Dense {
                        in_features: 8,
                        out_features: 3,
                        activation: Activation::Softmax,
                    },
                ],
            },
            11,
        )
        .unwrap();
        m.weights_mut()[1].data_mut()[0] = 0.1;
        let x = Tensor::new(vec![5, 5, 1], (0..25).map(|v| (v % 7) as f32 / 7.0).collect()).unwrap();
        let single = backward(&m, std::slice::from_ref(&x), &[1]).unwrap();
        let double = backward(&m, &[x.clone(), x], &[1, 1]).unwrap();
        for (a, b) in single.grads.iter().zip(&double.grads) {
            for (u, v) in a.data().iter().zip(b.data()) {
                assert!((u - v).abs() <= 1e-6 * u.abs().max(1.0), "{u} vs {v}");
            }
        }
    }

    #[test]
    fn rejects_models_without_softmax_head() {
        let m = ModelSpec::zeros(Architecture {
            input_shape: vec![2],
            layers: vec![LayerSpec::Dense {
                in_features: 2,
                out_features: 2,
                activation: Activation::None,
            }],
        })
        .unwrap();
        assert!(backward(&m, &[Tensor::zeros(&[2])], &[0]).is_err());
        let s = softmax_dense(2, 2);
        assert!(backward(&s, &[Tensor::zeros(&[2])], &[2]).is_err());
        assert!(backward(&s, &[], &[]).is_err());
    }
}
