//! Post-training full-integer quantization.
//!
//! Weights are quantized symmetrically per tensor, activations asymmetrically
//! per tensor from min/max ranges observed on a representative set. Biases
//! become int32 at scale `input_scale * weight_scale`, and each weighted
//! layer rescales its accumulator with a Q31 multiplier. The model boundary
//! stays float32: inputs are quantized on entry, final logits dequantized and
//! passed through a float softmax.

pub mod kernels;

pub use kernels::Requant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::netgraph::ops::{pool_geometry, softmax_in_place, ConvGeometry};
use crate::netgraph::{Activation, Architecture, LayerSpec, ModelSpec, Padding};
use crate::quant::{decompose_multiplier, params_from_range, round_half_away, QuantParams, Range};
use crate::tensor::{QuantTensor, Tensor};

/// Default number of representative samples.
pub const DEFAULT_REPRESENTATIVE_SAMPLES: usize = 128;

/// Observed ranges for every tensor in a model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationProfile {
    pub input: Range,
    /// One per layer: the layer's output after relu, or its logits for the
    /// softmax head.
    pub activations: Vec<Range>,
    /// One per weight tensor, in model order.
    pub weights: Vec<Range>,
    pub sample_count: usize,
}

/// Runs the representative samples through the float model and records the
/// elementwise min/max of every activation.
pub fn calibrate(spec: &ModelSpec, representative: &[Tensor]) -> Result<CalibrationProfile> {
    if representative.is_empty() {
        return Err(Error::EmptyDataset("representative set is empty".into()));
    }
    let per_sample: Vec<(Range, Vec<Range>)> = representative
        .par_iter()
        .map(|x| {
            let trace = spec.forward_trace(x)?;
            let input = Range::of(trace.input.data()).expect("tensors are non-empty");
            let acts = trace
                .outputs
                .iter()
                .map(|t| Range::of(t.data()).expect("tensors are non-empty"))
                .collect();
            Ok((input, acts))
        })
        .collect::<Result<_>>()?;
    let mut iter = per_sample.into_iter();
    let (mut input, mut activations) = iter.next().expect("non-empty");
    for (i, acts) in iter {
        input = input.union(i);
        for (a, b) in activations.iter_mut().zip(acts) {
            *a = a.union(b);
        }
    }
    let weights = spec
        .weights()
        .iter()
        .map(|w| Range::of(w.data()).expect("tensors are non-empty"))
        .collect();
    Ok(CalibrationProfile {
        input,
        activations,
        weights,
        sample_count: representative.len(),
    })
}

/// Integer form of one layer.
#[derive(Debug, Clone, PartialEq)]
pub enum QuantLayer {
    Conv2d {
        weights: QuantTensor,
        bias: Vec<i32>,
        bias_scale: f32,
        requant: Requant,
        stride: usize,
        padding: Padding,
        relu: bool,
        output: QuantParams,
    },
    Dense {
        weights: QuantTensor,
        bias: Vec<i32>,
        bias_scale: f32,
        requant: Requant,
        relu: bool,
        output: QuantParams,
    },
    MaxPool2d {
        pool: usize,
        stride: usize,
        output: QuantParams,
    },
    Flatten {
        output: QuantParams,
    },
}

impl QuantLayer {
    pub fn output_params(&self) -> QuantParams {
        match self {
            QuantLayer::Conv2d { output, .. }
            | QuantLayer::Dense { output, .. }
            | QuantLayer::MaxPool2d { output, .. }
            | QuantLayer::Flatten { output } => *output,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedModel {
    pub arch: Architecture,
    pub input_params: QuantParams,
    pub layers: Vec<QuantLayer>,
}

impl QuantizedModel {
    /// Activation encoding feeding layer `index`.
    pub fn layer_input_params(&self, index: usize) -> QuantParams {
        if index == 0 {
            self.input_params
        } else {
            self.layers[index - 1].output_params()
        }
    }

    pub fn output_params(&self) -> QuantParams {
        self.layers
            .last()
            .map(QuantLayer::output_params)
            .unwrap_or(self.input_params)
    }

    pub fn param_count(&self) -> usize {
        self.arch.param_count()
    }

    fn ends_in_softmax(&self) -> bool {
        self.arch
            .layers
            .last()
            .is_some_and(|l| l.activation() == Activation::Softmax)
    }

    /// Runs the integer pipeline on an already-quantized input.
    pub fn run_integer(&self, input: &QuantTensor) -> Result<QuantTensor> {
        if input.shape() != self.arch.input_shape.as_slice() {
            return Err(Error::Shape(format!(
                "model expects input {:?}, got {:?}",
                self.arch.input_shape,
                input.shape()
            )));
        }
        let mut current = input.clone();
        for (index, layer) in self.layers.iter().enumerate() {
            let in_zp = self.layer_input_params(index).zero_point;
            current = match layer {
                QuantLayer::Conv2d {
                    weights,
                    bias,
                    requant,
                    stride,
                    padding,
                    relu,
                    output,
                    ..
                } => conv2d_int8(&current, in_zp, weights, bias, *requant, *output, *stride, *padding, *relu)?,
                QuantLayer::Dense {
                    weights,
                    bias,
                    requant,
                    relu,
                    output,
                    ..
                } => dense_int8(&current, in_zp, weights, bias, *requant, *output, *relu)?,
                QuantLayer::MaxPool2d { pool, stride, .. } => maxpool_int8(&current, *pool, *stride)?,
                QuantLayer::Flatten { .. } => {
                    QuantTensor::new(vec![current.len()], current.data().to_vec(), current.params())?
                }
            };
        }
        Ok(current)
    }
}

/// Float32 in, float32 out. Softmax is applied in float when the model ends
/// in a softmax layer.
pub fn infer_quantized(qm: &QuantizedModel, input: &Tensor) -> Result<Tensor> {
    if input.shape() != qm.arch.input_shape.as_slice() {
        return Err(Error::Shape(format!(
            "model expects input {:?}, got {:?}",
            qm.arch.input_shape,
            input.shape()
        )));
    }
    let q = QuantTensor::quantize(input, qm.input_params);
    let out = qm.run_integer(&q)?;
    let mut logits = out.dequantize();
    if qm.ends_in_softmax() {
        softmax_in_place(logits.data_mut());
    }
    Ok(logits)
}

/// Int8 convolution over a quantized `[h, w, c]` input.
#[allow(clippy::too_many_arguments)]
pub fn conv2d_int8(
    input: &QuantTensor,
    input_zp: i32,
    weights: &QuantTensor,
    bias: &[i32],
    requant: Requant,
    out_params: QuantParams,
    stride: usize,
    padding: Padding,
    relu: bool,
) -> Result<QuantTensor> {
    let g = ConvGeometry::new(qhwc(input)?, weights.shape(), stride, padding)?;
    if bias.len() != g.out_c {
        return Err(Error::Shape(format!(
            "conv bias has {} entries, expected {}",
            bias.len(),
            g.out_c
        )));
    }
    let data = kernels::conv2d(
        &g,
        input.data(),
        input_zp,
        weights.data(),
        bias,
        requant,
        out_params.zero_point,
        relu,
    );
    QuantTensor::new(vec![g.out_h, g.out_w, g.out_c], data, out_params)
}

pub fn dense_int8(
    input: &QuantTensor,
    input_zp: i32,
    weights: &QuantTensor,
    bias: &[i32],
    requant: Requant,
    out_params: QuantParams,
    relu: bool,
) -> Result<QuantTensor> {
    let &[n_in, n_out] = weights.shape() else {
        return Err(Error::Shape(format!(
            "dense weights must be [in, out], got {:?}",
            weights.shape()
        )));
    };
    if input.len() != n_in || bias.len() != n_out {
        return Err(Error::Shape(format!(
            "dense [{n_in}, {n_out}] got {} inputs and {} biases",
            input.len(),
            bias.len()
        )));
    }
    let data = kernels::dense(
        input.data(),
        input_zp,
        weights.data(),
        bias,
        requant,
        out_params.zero_point,
        relu,
    );
    QuantTensor::new(vec![n_out], data, out_params)
}

pub fn maxpool_int8(input: &QuantTensor, pool: usize, stride: usize) -> Result<QuantTensor> {
    let [h, w, c] = qhwc(input)?;
    let (oh, ow) = pool_geometry(h, w, pool, stride)?;
    let data = kernels::maxpool(input.data(), w, c, pool, stride, oh, ow);
    QuantTensor::new(vec![oh, ow, c], data, input.params())
}

fn qhwc(t: &QuantTensor) -> Result<[usize; 3]> {
    match *t.shape() {
        [h, w, c] => Ok([h, w, c]),
        _ => Err(Error::Shape(format!(
            "expected an [h, w, c] tensor, got {:?}",
            t.shape()
        ))),
    }
}

/// Converts a float bias to int32 at `scale`, saturating at the i32 bounds.
pub fn quantize_bias(values: &[f32], scale: f32) -> (Vec<i32>, usize) {
    let mut saturated = 0;
    let q = values
        .iter()
        .map(|&b| {
            let r = round_half_away(b as f64 / scale as f64);
            if r > i32::MAX as f64 || r < i32::MIN as f64 {
                saturated += 1;
            }
            r.clamp(i32::MIN as f64, i32::MAX as f64) as i32
        })
        .collect();
    (q, saturated)
}

/// Output params for a weighted layer, widened if needed so the real
/// requantization multiplier stays below 1.
fn output_params_for(range: Range, bias_scale: f32) -> Result<QuantParams> {
    let mut out = params_from_range(range, false)?;
    if bias_scale as f64 / out.scale as f64 >= 1.0 {
        // smallest f32 strictly above the bias scale
        out.scale = f32::from_bits(bias_scale.to_bits() + 1);
    }
    Ok(out)
}

fn check_range(r: Range, what: &str) -> Result<()> {
    if !(r.min.is_finite() && r.max.is_finite()) || r.min > r.max {
        return Err(Error::InvalidArgument(format!(
            "{what} has invalid calibration range [{}, {}]",
            r.min, r.max
        )));
    }
    Ok(())
}

/// Builds the integer model from float weights and a calibration profile.
pub fn quantize_model(spec: &ModelSpec, profile: &CalibrationProfile) -> Result<QuantizedModel> {
    let layers = &spec.arch.layers;
    if profile.activations.len() != layers.len() {
        return Err(Error::InvalidArgument(format!(
            "profile has {} activation ranges for {} layers",
            profile.activations.len(),
            layers.len()
        )));
    }
    if profile.weights.len() != spec.weights().len() {
        return Err(Error::InvalidArgument(format!(
            "profile has {} weight ranges for {} weight tensors",
            profile.weights.len(),
            spec.weights().len()
        )));
    }
    check_range(profile.input, "input")?;
    let input_params = params_from_range(profile.input, false)?;
    let offsets = spec.arch.weight_offsets();
    let mut current = input_params;
    let mut out_layers = Vec::with_capacity(layers.len());

    for (index, layer) in layers.iter().enumerate() {
        check_range(profile.activations[index], &format!("layer {index} output"))?;
        let q = match *layer {
            LayerSpec::Conv2d { .. } | LayerSpec::Dense { .. } => {
                let w = offsets[index].expect("weighted layer");
                check_range(profile.weights[w], &format!("weight tensor {w}"))?;
                let kernel = &spec.weights()[w];
                let fan_in: usize = kernel.shape()[..kernel.shape().len() - 1].iter().product();
                if fan_in > kernels::MAX_FAN_IN {
                    return Err(Error::Layer {
                        index,
                        message: format!(
                            "fan-in {fan_in} could overflow the int32 accumulator (max {})",
                            kernels::MAX_FAN_IN
                        ),
                    });
                }
                let w_params = params_from_range(profile.weights[w], true)?;
                let weights = QuantTensor::quantize(kernel, w_params);
                let bias_scale = current.scale * w_params.scale;
                if bias_scale.is_nan() || bias_scale <= 0.0 {
                    return Err(Error::Layer {
                        index,
                        message: "bias scale underflows".into(),
                    });
                }
                let (bias, saturated) = quantize_bias(spec.weights()[w + 1].data(), bias_scale);
                if saturated > 0 {
                    log::warn!("layer {index}: {saturated} bias values saturated at int32 bounds");
                }
                let output = output_params_for(profile.activations[index], bias_scale)?;
                let (multiplier, shift) =
                    decompose_multiplier(bias_scale as f64 / output.scale as f64)?;
                let requant = Requant { multiplier, shift };
                let relu = layer.activation() == Activation::Relu;
                match *layer {
                    LayerSpec::Conv2d {
                        stride, padding, ..
                    } => QuantLayer::Conv2d {
                        weights,
                        bias,
                        bias_scale,
                        requant,
                        stride,
                        padding,
                        relu,
                        output,
                    },
                    _ => QuantLayer::Dense {
                        weights,
                        bias,
                        bias_scale,
                        requant,
                        relu,
                        output,
                    },
                }
            }
            LayerSpec::MaxPool2d { pool, stride } => QuantLayer::MaxPool2d {
                pool,
                stride,
                output: current,
            },
            LayerSpec::Flatten => QuantLayer::Flatten { output: current },
        };
        current = q.output_params();
        out_layers.push(q);
    }
    Ok(QuantizedModel {
        arch: spec.arch.clone(),
        input_params,
        layers: out_layers,
    })
}

/// Calibrate and convert in one step.
pub fn quantize_with_representative(spec: &ModelSpec, representative: &[Tensor]) -> Result<QuantizedModel> {
    let profile = calibrate(spec, representative)?;
    quantize_model(spec, &profile)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netgraph::ops;
    use crate::quant::{dequantize_value, quantize_value};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn small_cnn(classes: usize) -> Architecture {
        Architecture {
            input_shape: vec![8, 8, 1],
            layers: vec![
                LayerSpec::Conv2d {
                    in_channels: 1,
                    out_channels: 4,
                    kernel: 3,
                    stride: 1,
                    padding: Padding::Same,
                    activation: Activation::Relu,
                },
                LayerSpec::MaxPool2d { pool: 2, stride: 2 },
                LayerSpec::Flatten,
                LayerSpec::Dense {
                    in_features: 64,
                    out_features: classes,
                    activation: Activation::Softmax,
                },
            ],
        }
    }

    fn random_input(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
        let n: usize = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(0f32..1.0)).collect()).unwrap()
    }

    #[test]
    fn calibration_examples() {
        let zero = ModelSpec::zeros(small_cnn(24)).unwrap();
        let p = calibrate(&zero, &[Tensor::zeros(&[8, 8, 1])]).unwrap();
        assert_eq!(p.input, Range { min: 0.0, max: 0.0 });
        assert!(p.activations.iter().all(|r| *r == Range { min: 0.0, max: 0.0 }));

        let m = ModelSpec::he_uniform(small_cnn(5), 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = random_input(&mut rng, &[8, 8, 1]);
        let b = random_input(&mut rng, &[8, 8, 1]);
        let pa = calibrate(&m, std::slice::from_ref(&a)).unwrap();
        let pb = calibrate(&m, std::slice::from_ref(&b)).unwrap();
        let pab = calibrate(&m, &[a, b]).unwrap();
        assert_eq!(pab.sample_count, 2);
        for i in 0..pab.activations.len() {
            assert_eq!(pab.activations[i], pa.activations[i].union(pb.activations[i]));
        }
        assert!(pab.activations[0].min >= 0.0, "relu output");
        assert!(calibrate(&m, &[]).is_err());
    }

    #[test]
    fn zero_model_quantizes_to_zero_and_predicts_uniform() {
        let zero = ModelSpec::zeros(small_cnn(24)).unwrap();
        let qm = quantize_with_representative(&zero, &[Tensor::full(&[8, 8, 1], 0.5)]).unwrap();
        for layer in &qm.layers {
            if let QuantLayer::Conv2d { weights, .. } | QuantLayer::Dense { weights, .. } = layer {
                assert!(weights.data().iter().all(|&q| q == 0));
            }
        }
        let p = infer_quantized(&qm, &Tensor::full(&[8, 8, 1], 0.3)).unwrap();
        for v in p.data() {
            assert!((v - 1.0 / 24.0).abs() < 1e-6);
        }
    }

    #[test]
    fn symmetric_weight_scale_and_bias() {
        let w = Range { min: -0.1, max: 0.254 };
        let p = params_from_range(w, true).unwrap();
        assert!((p.scale - 0.002).abs() < 1e-9);
        let (b, sat) = quantize_bias(&[1.0, -1.0], 0.0001);
        assert_eq!(b, vec![10000, -10000]);
        assert_eq!(sat, 0);
        let (b, sat) = quantize_bias(&[1e9], 1e-3);
        assert_eq!(b, vec![i32::MAX]);
        assert_eq!(sat, 1);
    }

    #[test]
    fn bias_scale_identity_and_multiplier_contract() {
        let m = ModelSpec::he_uniform(small_cnn(6), 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let rep: Vec<Tensor> = (0..16).map(|_| random_input(&mut rng, &[8, 8, 1])).collect();
        let qm = quantize_with_representative(&m, &rep).unwrap();
        for (i, layer) in qm.layers.iter().enumerate() {
            if let QuantLayer::Conv2d { weights, bias_scale, requant, .. }
            | QuantLayer::Dense { weights, bias_scale, requant, .. } = layer
            {
                assert_eq!(*bias_scale, qm.layer_input_params(i).scale * weights.params().scale);
                assert!(requant.multiplier >= crate::quant::Q31_MIN);
                assert!(requant.shift >= 0);
            }
        }
    }

    #[test]
    fn identity_scale_pointwise_conv() {
        let s = 0.99f32;
        let params = QuantParams { scale: s, zero_point: 0 };
        let (multiplier, shift) = decompose_multiplier((s * s) as f64 / s as f64).unwrap();
        let input = QuantTensor::new(vec![1, 5, 1], vec![-128, -3, 0, 50, 127], params).unwrap();
        let w = QuantTensor::new(vec![1, 1, 1, 1], vec![1], params).unwrap();
        let out = conv2d_int8(&input, 0, &w, &[0], Requant { multiplier, shift }, params, 1, Padding::Valid, false)
            .unwrap();
        for (o, i) in out.data().iter().zip(input.data()) {
            assert!((*o as i32 - *i as i32).abs() <= 1, "{o} vs {i}");
        }
        let wd = QuantTensor::new(vec![2, 2], vec![1, 0, 0, 1], params).unwrap();
        let x = QuantTensor::new(vec![2], vec![40, -77], params).unwrap();
        let out = dense_int8(&x, 0, &wd, &[0, 0], Requant { multiplier, shift }, params, false).unwrap();
        assert_eq!(out.data(), &[40, -76]);
    }

    #[test]
    fn maxpool_commutes_with_dequantization() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..50 {
            let params = QuantParams {
                scale: rng.gen_range(0.001f32..2.0),
                zero_point: rng.gen_range(-128..=127),
            };
            let data: Vec<i8> = (0..4 * 6 * 3).map(|_| rng.gen()).collect();
            let q = QuantTensor::new(vec![4, 6, 3], data, params).unwrap();
            let via_int = maxpool_int8(&q, 2, 2).unwrap();
            let via_float = ops::maxpool2d(&q.dequantize(), 2, 2).unwrap();
            let requantized: Vec<i8> = via_float.data().iter().map(|&x| quantize_value(x, params)).collect();
            assert_eq!(via_int.data(), requantized.as_slice());
            assert_eq!(via_int.params(), params);
        }
    }

    #[test]
    fn random_layers_track_float_within_three_steps() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for case in 0..20 {
            let conv = case % 2 == 0;
            let (layer, shape) = if conv {
                let cin = rng.gen_range(1..4);
                (
                    LayerSpec::Conv2d {
                        in_channels: cin,
                        out_channels: rng.gen_range(1..6),
                        kernel: rng.gen_range(1..4),
                        stride: 1,
                        padding: Padding::Same,
                        activation: if rng.gen() { Activation::Relu } else { Activation::None },
                    },
                    vec![8, 8, cin],
                )
            } else {
                let n = rng.gen_range(4..40);
                (
                    LayerSpec::Dense {
                        in_features: n,
                        out_features: rng.gen_range(1..10),
                        activation: if rng.gen() { Activation::Relu } else { Activation::None },
                    },
                    vec![n],
                )
            };
            let mut m = ModelSpec::he_uniform(
                Architecture {
                    input_shape: shape.clone(),
                    layers: vec![layer],
                },
                case,
            )
            .unwrap();
            for b in m.weights_mut()[1].data_mut() {
                *b = rng.gen_range(-0.2..0.2);
            }
            let xs: Vec<Tensor> = (0..8).map(|_| random_input(&mut rng, &shape)).collect();
            let qm = quantize_with_representative(&m, &xs).unwrap();
            let s_out = qm.output_params();
            for x in &xs {
                let float = m.forward(x).unwrap();
                let q = qm.run_integer(&QuantTensor::quantize(x, qm.input_params)).unwrap();
                for (f, &qv) in float.data().iter().zip(q.data()) {
                    let d = dequantize_value(qv, s_out);
                    assert!((d - f).abs() <= 3.0 * s_out.scale, "case {case}: {d} vs {f}");
                }
            }
        }
    }

    #[test]
    fn rejects_incomplete_profiles() {
        let m = ModelSpec::he_uniform(small_cnn(3), 0).unwrap();
        let mut p = calibrate(&m, &[Tensor::full(&[8, 8, 1], 0.5)]).unwrap();
        p.activations.pop();
        assert!(quantize_model(&m, &p).is_err());
        let mut p = calibrate(&m, &[Tensor::full(&[8, 8, 1], 0.5)]).unwrap();
        p.activations[0].max = f32::INFINITY;
        assert!(quantize_model(&m, &p).is_err());
    }

    #[test]
    fn inference_is_deterministic_and_checks_shape() {
        let m = ModelSpec::he_uniform(small_cnn(4), 6).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random_input(&mut rng, &[8, 8, 1]);
        let qm = quantize_with_representative(&m, std::slice::from_ref(&x)).unwrap();
        let a = infer_quantized(&qm, &x).unwrap();
        let b = infer_quantized(&qm, &x).unwrap();
        assert_eq!(a.data(), b.data());
        assert!(infer_quantized(&qm, &Tensor::zeros(&[8, 8, 2])).is_err());
    }

    #[test]
    fn tiny_output_scale_is_widened() {
        let p = output_params_for(Range { min: 0.0, max: 1e-6 }, 1e-3).unwrap();
        assert!((1e-3f64 / p.scale as f64) < 1.0);
    }
}
