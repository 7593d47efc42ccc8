//! Layer-stack model description, parameter accounting and float32 forward
//! execution.
//!
//! Activations are laid out `[h, w, c]` (channels last). Conv kernels are
//! `[k, k, in, out]`, dense weights `[in, out]`, so flattening a feature map
//! is a plain reshape.

pub mod ops;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const REFERENCE_CONFIG: &str = include_str!("../../configs/ref-28x28.model.json");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Padding {
    Same,
    Valid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    None,
    Relu,
    Softmax,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        #[serde(default = "one")]
        stride: usize,
        padding: Padding,
        #[serde(default)]
        activation: Activation,
    },
    MaxPool2d {
        pool: usize,
        stride: usize,
    },
    Flatten,
    Dense {
        in_features: usize,
        out_features: usize,
        #[serde(default)]
        activation: Activation,
    },
}

fn one() -> usize {
    1
}

impl LayerSpec {
    /// Shapes of this layer's trainable tensors: kernel/weight then bias.
    pub fn weight_shapes(&self) -> Vec<Vec<usize>> {
        match *self {
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                ..
            } => vec![
                vec![kernel, kernel, in_channels, out_channels],
                vec![out_channels],
            ],
            LayerSpec::Dense {
                in_features,
                out_features,
                ..
            } => vec![vec![in_features, out_features], vec![out_features]],
            _ => Vec::new(),
        }
    }

    pub fn param_count(&self) -> usize {
        match *self {
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                ..
            } => kernel * kernel * in_channels * out_channels + out_channels,
            LayerSpec::Dense {
                in_features,
                out_features,
                ..
            } => in_features * out_features + out_features,
            _ => 0,
        }
    }

    pub fn activation(&self) -> Activation {
        match *self {
            LayerSpec::Conv2d { activation, .. } | LayerSpec::Dense { activation, .. } => {
                activation
            }
            _ => Activation::None,
        }
    }

    pub fn has_weights(&self) -> bool {
        matches!(self, LayerSpec::Conv2d { .. } | LayerSpec::Dense { .. })
    }

    /// Output shape for `input`, or a message describing the mismatch.
    pub fn output_shape(&self, input: &[usize]) -> std::result::Result<Vec<usize>, String> {
        match *self {
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                stride,
                padding,
                activation,
            } => {
                if kernel == 0 || stride == 0 || in_channels == 0 || out_channels == 0 {
                    return Err("conv2d dimensions must be positive".into());
                }
                if activation == Activation::Softmax {
                    return Err("conv2d does not support softmax".into());
                }
                let [h, w, c] = spatial(input)?;
                if c != in_channels {
                    return Err(format!("conv2d expects {in_channels} channels, input has {c}"));
                }
                let (oh, _) = ops::window_geometry(h, kernel, stride, padding)?;
                let (ow, _) = ops::window_geometry(w, kernel, stride, padding)?;
                Ok(vec![oh, ow, out_channels])
            }
            LayerSpec::MaxPool2d { pool, stride } => {
                if pool == 0 || stride == 0 {
                    return Err("maxpool2d dimensions must be positive".into());
                }
                let [h, w, c] = spatial(input)?;
                let (oh, _) = ops::window_geometry(h, pool, stride, Padding::Valid)?;
                let (ow, _) = ops::window_geometry(w, pool, stride, Padding::Valid)?;
                Ok(vec![oh, ow, c])
            }
            LayerSpec::Flatten => Ok(vec![input.iter().product()]),
            LayerSpec::Dense {
                in_features,
                out_features,
                ..
            } => {
                if in_features == 0 || out_features == 0 {
                    return Err("dense dimensions must be positive".into());
                }
                if input != [in_features] {
                    return Err(format!(
                        "dense expects input [{in_features}], got {input:?}"
                    ));
                }
                Ok(vec![out_features])
            }
        }
    }
}

fn spatial(shape: &[usize]) -> std::result::Result<[usize; 3], String> {
    match *shape {
        [h, w, c] => Ok([h, w, c]),
        _ => Err(format!("expected an [h, w, c] feature map, got {shape:?}")),
    }
}

/// The JSON-describable part of a model: input shape and layer stack.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub input_shape: Vec<usize>,
    pub layers: Vec<LayerSpec>,
}

impl Architecture {
    pub fn from_json(text: &str) -> Result<Self> {
        let arch: Architecture = serde_json::from_str(text)?;
        arch.infer_shapes()?;
        Ok(arch)
    }

    /// The bundled 28×28×1 → 24-class architecture.
    pub fn reference() -> Self {
        Self::from_json(REFERENCE_CONFIG).expect("bundled reference config is valid")
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("architecture serializes")
    }

    /// Output shape of every layer, in order.
    pub fn infer_shapes(&self) -> Result<Vec<Vec<usize>>> {
        if self.input_shape.is_empty()
            || self.input_shape.len() > 3
            || self.input_shape.contains(&0)
        {
            return Err(Error::Shape(format!(
                "input shape must have 1 to 3 positive dimensions, got {:?}",
                self.input_shape
            )));
        }
        let last = self.layers.len().saturating_sub(1);
        let mut shape = self.input_shape.clone();
        let mut shapes = Vec::with_capacity(self.layers.len());
        for (index, layer) in self.layers.iter().enumerate() {
            if layer.activation() == Activation::Softmax && index != last {
                return Err(Error::Layer {
                    index,
                    message: "softmax is only allowed on the final layer".into(),
                });
            }
            shape = layer
                .output_shape(&shape)
                .map_err(|message| Error::Layer { index, message })?;
            shapes.push(shape.clone());
        }
        Ok(shapes)
    }

    pub fn output_shape(&self) -> Result<Vec<usize>> {
        Ok(self
            .infer_shapes()?
            .pop()
            .unwrap_or_else(|| self.input_shape.clone()))
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(LayerSpec::param_count).sum()
    }

    /// Shapes of all trainable tensors in layer order.
    pub fn weight_shapes(&self) -> Vec<Vec<usize>> {
        self.layers.iter().flat_map(LayerSpec::weight_shapes).collect()
    }

    /// Index of the first weight tensor of each layer (None for weightless
    /// layers).
    pub fn weight_offsets(&self) -> Vec<Option<usize>> {
        let mut next = 0;
        self.layers
            .iter()
            .map(|l| {
                if l.has_weights() {
                    let at = next;
                    next += 2;
                    Some(at)
                } else {
                    None
                }
            })
            .collect()
    }

    pub fn class_count(&self) -> Result<usize> {
        Ok(self.output_shape()?.iter().product())
    }
}

/// Architecture plus float weights.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub arch: Architecture,
    weights: Vec<Tensor>,
}

/// Per-layer activations recorded during a forward pass.
#[derive(Debug, Clone)]
pub struct Trace {
    pub input: Tensor,
    /// Output of each layer after its activation, except that a softmax
    /// layer records its logits.
    pub outputs: Vec<Tensor>,
    /// Final model output (probabilities when the model ends in softmax).
    pub output: Tensor,
}

impl ModelSpec {
    pub fn new(arch: Architecture, weights: Vec<Tensor>) -> Result<Self> {
        arch.infer_shapes()?;
        let shapes = arch.weight_shapes();
        if shapes.len() != weights.len() {
            return Err(Error::Shape(format!(
                "architecture has {} weight tensors, got {}",
                shapes.len(),
                weights.len()
            )));
        }
        for (i, (s, w)) in shapes.iter().zip(&weights).enumerate() {
            if s.as_slice() != w.shape() {
                return Err(Error::Shape(format!(
                    "weight tensor {i} should be {s:?}, got {:?}",
                    w.shape()
                )));
            }
        }
        Ok(Self { arch, weights })
    }

    pub fn zeros(arch: Architecture) -> Result<Self> {
        let weights = arch.weight_shapes().iter().map(|s| Tensor::zeros(s)).collect();
        Self::new(arch, weights)
    }

    /// He-uniform kernels, zero biases.
    pub fn he_uniform(arch: Architecture, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut weights = Vec::new();
        for layer in &arch.layers {
            let shapes = layer.weight_shapes();
            if shapes.is_empty() {
                continue;
            }
            let kernel_shape = &shapes[0];
            let fan_in: usize = kernel_shape[..kernel_shape.len() - 1].iter().product();
            let limit = (6.0 / fan_in as f64).sqrt() as f32;
            let n: usize = kernel_shape.iter().product();
            let data = (0..n).map(|_| rng.gen_range(-limit..=limit)).collect();
            weights.push(Tensor::new(kernel_shape.clone(), data)?);
            weights.push(Tensor::zeros(&shapes[1]));
        }
        Self::new(arch, weights)
    }

    pub fn weights(&self) -> &[Tensor] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [Tensor] {
        &mut self.weights
    }

    pub fn param_count(&self) -> usize {
        self.arch.param_count()
    }

    fn check_input(&self, input: &Tensor) -> Result<()> {
        if input.shape() != self.arch.input_shape.as_slice() {
            return Err(Error::Shape(format!(
                "model expects input {:?}, got {:?}",
                self.arch.input_shape,
                input.shape()
            )));
        }
        Ok(())
    }

    pub fn forward(&self, input: &Tensor) -> Result<Tensor> {
        Ok(self.forward_trace(input)?.output)
    }

    /// Forward pass that keeps every intermediate activation.
    pub fn forward_trace(&self, input: &Tensor) -> Result<Trace> {
        self.check_input(input)?;
        let offsets = self.arch.weight_offsets();
        let mut outputs = Vec::with_capacity(self.arch.layers.len());
        let mut current = input.clone();
        let mut final_softmax = false;
        for (index, layer) in self.arch.layers.iter().enumerate() {
            let layer_err = |e: Error| Error::Layer {
                index,
                message: e.to_string(),
            };
            let mut out = match *layer {
                LayerSpec::Conv2d {
                    stride, padding, ..
                } => {
                    let w = offsets[index].expect("conv has weights");
                    ops::conv2d(&current, &self.weights[w], &self.weights[w + 1], stride, padding)
                        .map_err(layer_err)?
                }
                LayerSpec::MaxPool2d { pool, stride } => {
                    ops::maxpool2d(&current, pool, stride).map_err(layer_err)?
                }
                LayerSpec::Flatten => current.clone().reshape(vec![current.len()])?,
                LayerSpec::Dense { .. } => {
                    let w = offsets[index].expect("dense has weights");
                    ops::dense(&current, &self.weights[w], &self.weights[w + 1])
                        .map_err(layer_err)?
                }
            };
            match layer.activation() {
                Activation::Relu => ops::relu_in_place(out.data_mut()),
                Activation::Softmax => final_softmax = true,
                Activation::None => {}
            }
            outputs.push(out.clone());
            current = out;
        }
        if final_softmax {
            ops::softmax_in_place(current.data_mut());
        }
        Ok(Trace {
            input: input.clone(),
            outputs,
            output: current,
        })
    }

    /// Forward over a batch stacked on a leading axis; returns
    /// `[n, outputs...]`.
    pub fn forward_batch(&self, batch: &Tensor) -> Result<Tensor> {
        let (n, per) = split_batch(batch, &self.arch.input_shape)?;
        let outs: Vec<Tensor> = batch
            .data()
            .par_chunks(per)
            .map(|chunk| {
                let x = Tensor::new(self.arch.input_shape.clone(), chunk.to_vec())?;
                self.forward(&x)
            })
            .collect::<Result<_>>()?;
        let out_shape = outs[0].shape().to_vec();
        let mut shape = vec![n];
        shape.extend(out_shape);
        Tensor::new(shape, outs.into_iter().flat_map(Tensor::into_data).collect())
    }
}

pub(crate) fn split_batch(batch: &Tensor, input_shape: &[usize]) -> Result<(usize, usize)> {
    if batch.shape().len() != input_shape.len() + 1 || &batch.shape()[1..] != input_shape {
        return Err(Error::Shape(format!(
            "batch must be [n, {input_shape:?}], got {:?}",
            batch.shape()
        )));
    }
    Ok((batch.shape()[0], input_shape.iter().product()))
}
