//! TQM1 binary model files.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "TQM1"  u16 version  u8 quantized  u8 reserved
//! u32 metadata length, metadata JSON, zero pad to 4 bytes
//! per weight tensor:
//!   u8 dtype (0 f32, 1 i8, 2 i32)  u8 rank  dims u32 x rank
//!   [f32 scale, i32 zero_point]   only in quantized files
//!   zero pad to 4, payload, zero pad to 4
//! u32 CRC32 of everything before it
//! ```
//!
//! The metadata holds the architecture and, for quantized files, the
//! activation encodings and requantization constants. The number and shapes
//! of tensor records follow from the architecture.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{FormatError, Result};
use crate::netgraph::{Architecture, LayerSpec, ModelSpec};
use crate::quant::QuantParams;
use crate::quantizer::{QuantLayer, QuantizedModel, Requant};
use crate::tensor::{QuantTensor, Tensor};

pub const MAGIC: [u8; 4] = *b"TQM1";
pub const VERSION: u16 = 1;
pub const CHECKSUM_BYTES: usize = 4;

const DTYPE_F32: u8 = 0;
const DTYPE_I8: u8 = 1;
const DTYPE_I32: u8 = 2;

/// Either kind of model a file can hold.
#[derive(Debug, Clone, PartialEq)]
pub enum ModelFile {
    Float(ModelSpec),
    Quantized(QuantizedModel),
}

impl ModelFile {
    pub fn arch(&self) -> &Architecture {
        match self {
            ModelFile::Float(m) => &m.arch,
            ModelFile::Quantized(q) => &q.arch,
        }
    }

    pub fn is_quantized(&self) -> bool {
        matches!(self, ModelFile::Quantized(_))
    }
}

#[derive(Serialize, Deserialize)]
struct Metadata {
    architecture: Architecture,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    quantization: Option<QuantMetadata>,
}

#[derive(Serialize, Deserialize)]
struct QuantMetadata {
    input: QuantParams,
    layers: Vec<LayerMetadata>,
}

#[derive(Serialize, Deserialize)]
struct LayerMetadata {
    output: QuantParams,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    requant: Option<Requant>,
}

/// Byte accounting of an encoded file. `total()` equals the encoded length.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SizeBreakdown {
    /// Fixed header plus metadata and its padding.
    pub header_bytes: usize,
    /// One entry per tensor record, including record header and padding.
    pub tensor_bytes: Vec<usize>,
    pub checksum_bytes: usize,
}

impl SizeBreakdown {
    pub fn total(&self) -> usize {
        self.header_bytes + self.tensor_bytes.iter().sum::<usize>() + self.checksum_bytes
    }
}

enum Payload<'a> {
    F32(&'a [f32]),
    I8(&'a [i8]),
    I32(&'a [i32]),
}

struct Record<'a> {
    shape: Vec<usize>,
    params: Option<QuantParams>,
    payload: Payload<'a>,
}

fn pad4(buf: &mut Vec<u8>) {
    while !buf.len().is_multiple_of(4) {
        buf.push(0);
    }
}

fn write_record(buf: &mut Vec<u8>, r: &Record) {
    let dtype = match r.payload {
        Payload::F32(_) => DTYPE_F32,
        Payload::I8(_) => DTYPE_I8,
        Payload::I32(_) => DTYPE_I32,
    };
    buf.push(dtype);
    buf.push(r.shape.len() as u8);
    for &d in &r.shape {
        buf.extend_from_slice(&(d as u32).to_le_bytes());
    }
    if let Some(p) = r.params {
        buf.extend_from_slice(&p.scale.to_le_bytes());
        buf.extend_from_slice(&p.zero_point.to_le_bytes());
    }
    pad4(buf);
    match r.payload {
        Payload::F32(v) => v.iter().for_each(|x| buf.extend_from_slice(&x.to_le_bytes())),
        Payload::I8(v) => buf.extend(v.iter().map(|&x| x as u8)),
        Payload::I32(v) => v.iter().for_each(|x| buf.extend_from_slice(&x.to_le_bytes())),
    }
    pad4(buf);
}

fn records(file: &ModelFile) -> Vec<Record<'_>> {
    match file {
        ModelFile::Float(m) => m
            .weights()
            .iter()
            .map(|t| Record {
                shape: t.shape().to_vec(),
                params: None,
                payload: Payload::F32(t.data()),
            })
            .collect(),
        ModelFile::Quantized(q) => {
            let mut out = Vec::new();
            for layer in &q.layers {
                if let QuantLayer::Conv2d {
                    weights,
                    bias,
                    bias_scale,
                    ..
                }
                | QuantLayer::Dense {
                    weights,
                    bias,
                    bias_scale,
                    ..
                } = layer
                {
                    out.push(Record {
                        shape: weights.shape().to_vec(),
                        params: Some(weights.params()),
                        payload: Payload::I8(weights.data()),
                    });
                    out.push(Record {
                        shape: vec![bias.len()],
                        params: Some(QuantParams {
                            scale: *bias_scale,
                            zero_point: 0,
                        }),
                        payload: Payload::I32(bias),
                    });
                }
            }
            out
        }
    }
}

fn metadata(file: &ModelFile) -> Metadata {
    match file {
        ModelFile::Float(m) => Metadata {
            architecture: m.arch.clone(),
            quantization: None,
        },
        ModelFile::Quantized(q) => Metadata {
            architecture: q.arch.clone(),
            quantization: Some(QuantMetadata {
                input: q.input_params,
                layers: q
                    .layers
                    .iter()
                    .map(|l| LayerMetadata {
                        output: l.output_params(),
                        requant: match l {
                            QuantLayer::Conv2d { requant, .. } | QuantLayer::Dense { requant, .. } => {
                                Some(*requant)
                            }
                            _ => None,
                        },
                    })
                    .collect(),
            }),
        },
    }
}

fn encode_parts(file: &ModelFile) -> (Vec<u8>, SizeBreakdown) {
    let mut buf = Vec::new();
    buf.extend_from_slice(&MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.push(file.is_quantized() as u8);
    buf.push(0);
    let json = serde_json::to_vec(&metadata(file)).expect("metadata serializes");
    buf.extend_from_slice(&(json.len() as u32).to_le_bytes());
    buf.extend_from_slice(&json);
    pad4(&mut buf);
    let header_bytes = buf.len();

    let mut tensor_bytes = Vec::new();
    for r in records(file) {
        let before = buf.len();
        write_record(&mut buf, &r);
        tensor_bytes.push(buf.len() - before);
    }
    let crc = crc32fast::hash(&buf);
    buf.extend_from_slice(&crc.to_le_bytes());
    (
        buf,
        SizeBreakdown {
            header_bytes,
            tensor_bytes,
            checksum_bytes: CHECKSUM_BYTES,
        },
    )
}

pub fn encode(file: &ModelFile) -> Vec<u8> {
    encode_parts(file).0
}

pub fn size_breakdown(file: &ModelFile) -> SizeBreakdown {
    encode_parts(file).1
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], FormatError> {
        let end = self.pos.checked_add(n).ok_or(FormatError::Truncated)?;
        if end > self.bytes.len() {
            return Err(FormatError::Truncated);
        }
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> std::result::Result<u8, FormatError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> std::result::Result<u32, FormatError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn align4(&mut self) -> std::result::Result<(), FormatError> {
        let pad = (4 - self.pos % 4) % 4;
        self.take(pad).map(|_| ())
    }
}

struct RawTensor {
    dtype: u8,
    shape: Vec<usize>,
    params: Option<QuantParams>,
    payload: Vec<u8>,
}

fn malformed(msg: impl Into<String>) -> FormatError {
    FormatError::Malformed(msg.into())
}

/// Walks the structure after the magic and version. Running out of bytes
/// yields `Truncated`; anything inconsistent yields `Malformed`.
fn parse_body(bytes: &[u8]) -> std::result::Result<ModelFile, FormatError> {
    let mut r = Reader { bytes, pos: 6 };
    let quantized = match r.u8()? {
        0 => false,
        1 => true,
        f => return Err(malformed(format!("quantized flag {f}"))),
    };
    r.u8()?;
    let json_len = r.u32()? as usize;
    let json = r.take(json_len)?;
    r.align4()?;
    let meta: Metadata =
        serde_json::from_slice(json).map_err(|e| malformed(format!("metadata: {e}")))?;
    let arch = meta.architecture;
    arch.infer_shapes()
        .map_err(|e| malformed(format!("architecture: {e}")))?;
    let shapes = arch.weight_shapes();

    let mut raw = Vec::with_capacity(shapes.len());
    for _ in &shapes {
        let dtype = r.u8()?;
        let rank = r.u8()? as usize;
        if !(1..=4).contains(&rank) {
            return Err(malformed(format!("tensor rank {rank}")));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32()? as usize);
        }
        let params = if quantized {
            let scale = f32::from_le_bytes(r.take(4)?.try_into().unwrap());
            let zero_point = i32::from_le_bytes(r.take(4)?.try_into().unwrap());
            Some(QuantParams { scale, zero_point })
        } else {
            None
        };
        r.align4()?;
        let width = match dtype {
            DTYPE_F32 | DTYPE_I32 => 4,
            DTYPE_I8 => 1,
            d => return Err(malformed(format!("dtype {d}"))),
        };
        let count = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .and_then(|n| n.checked_mul(width))
            .ok_or_else(|| malformed("tensor size overflows"))?;
        let payload = r.take(count)?.to_vec();
        r.align4()?;
        raw.push(RawTensor {
            dtype,
            shape,
            params,
            payload,
        });
    }
    if r.pos != bytes.len() {
        return Err(malformed(format!(
            "{} unexpected bytes after the last tensor",
            bytes.len() - r.pos
        )));
    }
    for (i, (t, expected)) in raw.iter().zip(&shapes).enumerate() {
        if &t.shape != expected {
            return Err(malformed(format!(
                "tensor {i} has shape {:?}, architecture expects {expected:?}",
                t.shape
            )));
        }
    }

    match (quantized, meta.quantization) {
        (false, None) => build_float(arch, raw),
        (true, Some(q)) => build_quantized(arch, q, raw),
        _ => Err(malformed("quantized flag disagrees with metadata")),
    }
}

fn build_float(arch: Architecture, raw: Vec<RawTensor>) -> std::result::Result<ModelFile, FormatError> {
    let mut weights = Vec::with_capacity(raw.len());
    for t in raw {
        if t.dtype != DTYPE_F32 {
            return Err(malformed("float model holds a non-f32 tensor"));
        }
        let data = t
            .payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        weights.push(Tensor::new(t.shape, data).map_err(|e| malformed(e.to_string()))?);
    }
    ModelSpec::new(arch, weights)
        .map(ModelFile::Float)
        .map_err(|e| malformed(e.to_string()))
}

fn build_quantized(
    arch: Architecture,
    meta: QuantMetadata,
    raw: Vec<RawTensor>,
) -> std::result::Result<ModelFile, FormatError> {
    if meta.layers.len() != arch.layers.len() {
        return Err(malformed("layer metadata count disagrees with architecture"));
    }
    let check = |p: QuantParams, what: &str| {
        if p.is_valid() {
            Ok(p)
        } else {
            Err(malformed(format!("invalid {what} params {p:?}")))
        }
    };
    let input_params = check(meta.input, "input")?;
    let mut raw = raw.into_iter();
    let mut layers = Vec::with_capacity(arch.layers.len());
    for (index, (spec, lm)) in arch.layers.iter().zip(meta.layers).enumerate() {
        let output = check(lm.output, "output")?;
        let layer = match *spec {
            LayerSpec::Conv2d { .. } | LayerSpec::Dense { .. } => {
                let requant = lm
                    .requant
                    .ok_or_else(|| malformed(format!("layer {index} lacks requantization constants")))?;
                if requant.shift < 0 || requant.multiplier < crate::quant::Q31_MIN {
                    return Err(malformed(format!("layer {index} requantization {requant:?}")));
                }
                let (Some(w), Some(b)) = (raw.next(), raw.next()) else {
                    return Err(malformed("missing tensor records"));
                };
                if w.dtype != DTYPE_I8 || b.dtype != DTYPE_I32 {
                    return Err(malformed(format!("layer {index} tensor dtypes")));
                }
                let w_params = check(w.params.expect("quantized record"), "weight")?;
                let bias_scale = b.params.expect("quantized record").scale;
                if !(bias_scale > 0.0 && bias_scale.is_finite()) {
                    return Err(malformed(format!("layer {index} bias scale {bias_scale}")));
                }
                let weights = QuantTensor::new(
                    w.shape,
                    w.payload.iter().map(|&x| x as i8).collect(),
                    w_params,
                )
                .map_err(|e| malformed(e.to_string()))?;
                let bias = b
                    .payload
                    .chunks_exact(4)
                    .map(|c| i32::from_le_bytes(c.try_into().unwrap()))
                    .collect();
                let relu = spec.activation() == crate::netgraph::Activation::Relu;
                match *spec {
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
            LayerSpec::MaxPool2d { pool, stride } => QuantLayer::MaxPool2d { pool, stride, output },
            LayerSpec::Flatten => QuantLayer::Flatten { output },
        };
        layers.push(layer);
    }
    Ok(ModelFile::Quantized(QuantizedModel {
        arch,
        input_params,
        layers,
    }))
}

/// Decodes a model file. Never returns a partially built model.
pub fn decode(bytes: &[u8]) -> std::result::Result<ModelFile, FormatError> {
    if bytes.len() < 4 {
        return Err(FormatError::Truncated);
    }
    let magic: [u8; 4] = bytes[..4].try_into().unwrap();
    if magic != MAGIC {
        return Err(FormatError::BadMagic(magic));
    }
    if bytes.len() < 6 {
        return Err(FormatError::Truncated);
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != VERSION {
        return Err(FormatError::UnsupportedVersion(version));
    }
    if bytes.len() < 6 + CHECKSUM_BYTES {
        return Err(FormatError::Truncated);
    }
    let (body, trailer) = bytes.split_at(bytes.len() - CHECKSUM_BYTES);
    let stored = u32::from_le_bytes(trailer.try_into().unwrap());
    let computed = crc32fast::hash(body);
    if stored == computed {
        return parse_body(body).map_err(|e| match e {
            FormatError::Truncated => malformed("structure overruns the file"),
            other => other,
        });
    }
    // A mismatch is either a short file or damaged content; the structure
    // walk tells them apart.
    match parse_body(body) {
        Err(FormatError::Truncated) => Err(FormatError::Truncated),
        _ => Err(FormatError::ChecksumMismatch { stored, computed }),
    }
}

pub fn save_model(path: impl AsRef<Path>, file: &ModelFile) -> Result<()> {
    std::fs::write(path, encode(file))?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<ModelFile> {
    let bytes = std::fs::read(path)?;
    Ok(decode(&bytes)?)
}
