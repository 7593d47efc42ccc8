//! Affine int8 quantization primitives and Q31 fixed-point requantization.
//!
//! Real value `r` and its int8 code `q` are related by
//! `r = scale * (q - zero_point)`. Every rounding step in the crate uses
//! round-half-away-from-zero.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const QMIN: i32 = -128;
pub const QMAX: i32 = 127;

/// Per-tensor affine encoding.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantParams {
    pub scale: f32,
    pub zero_point: i32,
}

impl QuantParams {
    pub fn new(scale: f32, zero_point: i32) -> Result<Self> {
        if !(scale.is_finite() && scale > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "quantization scale must be finite and positive, got {scale}"
            )));
        }
        if !(QMIN..=QMAX).contains(&zero_point) {
            return Err(Error::InvalidArgument(format!(
                "zero point {zero_point} outside int8 range"
            )));
        }
        Ok(Self { scale, zero_point })
    }

    pub fn is_valid(&self) -> bool {
        self.scale.is_finite() && self.scale > 0.0 && (QMIN..=QMAX).contains(&self.zero_point)
    }
}

/// Observed value range of a tensor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Range {
    pub min: f32,
    pub max: f32,
}

impl Range {
    pub fn new(min: f32, max: f32) -> Result<Self> {
        if !(min.is_finite() && max.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "range bounds must be finite, got [{min}, {max}]"
            )));
        }
        if min > max {
            return Err(Error::InvalidArgument(format!(
                "range min {min} exceeds max {max}"
            )));
        }
        Ok(Self { min, max })
    }

    /// Range of a slice of values. `None` for an empty slice.
    pub fn of(values: &[f32]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let (min, max) = values
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            });
        Some(Self { min, max })
    }

    pub fn union(self, other: Range) -> Range {
        Range {
            min: self.min.min(other.min),
            max: self.max.max(other.max),
        }
    }
}

#[inline]
pub fn round_half_away(x: f64) -> f64 {
    // f64::round already breaks ties away from zero.
    x.round()
}

#[inline]
pub fn quantize_value(x: f32, p: QuantParams) -> i8 {
    let scaled = round_half_away(x as f64 / p.scale as f64) + p.zero_point as f64;
    scaled.clamp(QMIN as f64, QMAX as f64) as i8
}

#[inline]
pub fn dequantize_value(q: i8, p: QuantParams) -> f32 {
    (p.scale as f64 * (q as i32 - p.zero_point) as f64) as f32
}

fn positive_scale(s: f64) -> f32 {
    (s as f32).max(f32::MIN_POSITIVE)
}

/// Derives quantization parameters covering `r`.
///
/// Asymmetric mode spreads 255 steps over `r` extended to contain zero, so
/// zero is exactly representable. Symmetric mode fixes the zero point at 0.
pub fn params_from_range(r: Range, symmetric: bool) -> Result<QuantParams> {
    if !(r.min.is_finite() && r.max.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "non-finite calibration range [{}, {}]",
            r.min, r.max
        )));
    }
    if r.min > r.max {
        return Err(Error::InvalidArgument(format!(
            "calibration range min {} exceeds max {}",
            r.min, r.max
        )));
    }
    if r.min == r.max {
        let v = r.min;
        let scale = if v == 0.0 {
            1.0
        } else {
            positive_scale(v.abs() as f64 / 127.0)
        };
        return Ok(QuantParams {
            scale,
            zero_point: 0,
        });
    }
    if symmetric {
        let bound = r.min.abs().max(r.max.abs()) as f64;
        return Ok(QuantParams {
            scale: positive_scale(bound / 127.0),
            zero_point: 0,
        });
    }
    let min = r.min.min(0.0) as f64;
    let max = r.max.max(0.0) as f64;
    let scale = positive_scale((max - min) / 255.0);
    let zp = round_half_away(QMIN as f64 - min / scale as f64).clamp(QMIN as f64, QMAX as f64);
    Ok(QuantParams {
        scale,
        zero_point: zp as i32,
    })
}

/// Q31 multiplier lower bound (inclusive).
pub const Q31_MIN: i32 = 1 << 30;

/// Splits `real_m` in (0, 1) into a Q31 mantissa in [2^30, 2^31) and a
/// right shift, so that `real_m ≈ multiplier * 2^(-31 - shift)`.
pub fn decompose_multiplier(real_m: f64) -> Result<(i32, i32)> {
    if !(real_m > 0.0 && real_m < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "real multiplier must lie in (0, 1), got {real_m}"
        )));
    }
    let mut mantissa = real_m;
    let mut shift = 0i32;
    while mantissa < 0.5 {
        mantissa *= 2.0;
        shift += 1;
    }
    let mut q = round_half_away(mantissa * (1u64 << 31) as f64) as i64;
    if q == 1i64 << 31 {
        if shift > 0 {
            q = 1i64 << 30;
            shift -= 1;
        } else {
            q = (1i64 << 31) - 1;
        }
    }
    Ok((q as i32, shift))
}

/// Integer-only rescale of an int32 accumulator to int8:
/// `clamp(round(acc * multiplier * 2^(-31 - shift)) + out_zero_point)`.
#[inline]
pub fn requantize(acc: i32, multiplier: i32, shift: i32, out_zero_point: i32) -> i8 {
    let scaled = rounding_right_shift(acc as i64 * multiplier as i64, 31 + shift.max(0) as u32);
    (scaled + out_zero_point as i64).clamp(QMIN as i64, QMAX as i64) as i8
}

/// `round_half_away(value / 2^bits)` for |value| < 2^62.
#[inline]
fn rounding_right_shift(value: i64, bits: u32) -> i64 {
    if bits == 0 {
        return value;
    }
    if bits >= 63 {
        return 0;
    }
    let half = 1i64 << (bits - 1);
    if value >= 0 {
        (value + half) >> bits
    } else {
        -((-value + half) >> bits)
    }
}
