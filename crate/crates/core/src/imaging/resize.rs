//! Separable resampling with the five classic interpolation kernels.
//!
//! Destination pixel `d` samples source coordinate `(d + 0.5) * src / dst - 0.5`
//! (pixel centers aligned). Taps outside the raster clamp to the edge.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::Image;
use crate::error::{Error, Result};
use crate::quant::round_half_away;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InterpMethod {
    Nearest,
    Bilinear,
    Area,
    Bicubic,
    Lanczos4,
}

impl InterpMethod {
    pub const ALL: [InterpMethod; 5] = [
        InterpMethod::Nearest,
        InterpMethod::Bilinear,
        InterpMethod::Area,
        InterpMethod::Bicubic,
        InterpMethod::Lanczos4,
    ];

    pub fn name(self) -> &'static str {
        match self {
            InterpMethod::Nearest => "nearest",
            InterpMethod::Bilinear => "bilinear",
            InterpMethod::Area => "area",
            InterpMethod::Bicubic => "bicubic",
            InterpMethod::Lanczos4 => "lanczos4",
        }
    }
}

impl fmt::Display for InterpMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for InterpMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        InterpMethod::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| {
                Error::InvalidArgument(format!(
                    "unknown interpolation {s:?}; expected nearest, bilinear, area, bicubic or lanczos4"
                ))
            })
    }
}

const BICUBIC_A: f64 = -0.75;
const LANCZOS_WINDOW: f64 = 4.0;

fn keys_cubic(t: f64) -> f64 {
    let t = t.abs();
    let a = BICUBIC_A;
    if t <= 1.0 {
        ((a + 2.0) * t - (a + 3.0)) * t * t + 1.0
    } else if t < 2.0 {
        ((a * t - 5.0 * a) * t + 8.0 * a) * t - 4.0 * a
    } else {
        0.0
    }
}

fn lanczos(t: f64) -> f64 {
    if t == 0.0 {
        return 1.0;
    }
    if t.abs() >= LANCZOS_WINDOW {
        return 0.0;
    }
    let pt = std::f64::consts::PI * t;
    LANCZOS_WINDOW * pt.sin() * (pt / LANCZOS_WINDOW).sin() / (pt * pt)
}

type Taps = Vec<(usize, f64)>;

fn clamp_index(i: isize, len: usize) -> usize {
    i.clamp(0, len as isize - 1) as usize
}

fn kernel_taps(c: f64, len: usize, lo: isize, hi: isize, kernel: fn(f64) -> f64) -> Taps {
    let base = c.floor() as isize;
    let mut taps: Taps = (lo..=hi)
        .map(|k| {
            let i = base + k;
            (clamp_index(i, len), kernel(c - i as f64))
        })
        .collect();
    let sum: f64 = taps.iter().map(|t| t.1).sum();
    for t in &mut taps {
        t.1 /= sum;
    }
    taps
}

fn bilinear_taps(c: f64, len: usize) -> Taps {
    let base = c.floor();
    let frac = c - base;
    let i = base as isize;
    vec![
        (clamp_index(i, len), 1.0 - frac),
        (clamp_index(i + 1, len), frac),
    ]
}

/// Per-destination taps along one axis.
fn axis_taps(src: usize, dst: usize, method: InterpMethod) -> Vec<Taps> {
    let ratio = src as f64 / dst as f64;
    (0..dst)
        .map(|d| {
            let c = (d as f64 + 0.5) * ratio - 0.5;
            match method {
                InterpMethod::Nearest => {
                    vec![(clamp_index(round_half_away(c) as isize, src), 1.0)]
                }
                InterpMethod::Bilinear => bilinear_taps(c, src),
                InterpMethod::Bicubic => kernel_taps(c, src, -1, 2, keys_cubic),
                InterpMethod::Lanczos4 => kernel_taps(c, src, -3, 4, lanczos),
                InterpMethod::Area if dst >= src => bilinear_taps(c, src),
                InterpMethod::Area => area_weights(src, dst, d)
                    .into_iter()
                    .map(|(i, w)| (i, w as f64 / src as f64))
                    .collect(),
            }
        })
        .collect()
}

/// Integer box-coverage weights for downscaling, in units of `1 / dst` source
/// pixels. The weights of each destination pixel sum to `src`.
fn area_weights(src: usize, dst: usize, d: usize) -> Vec<(usize, u64)> {
    let lo = d * src;
    let hi = (d + 1) * src;
    let first = lo / dst;
    let last = (hi - 1) / dst;
    (first..=last.min(src - 1))
        .filter_map(|i| {
            let a = (i * dst).max(lo);
            let b = ((i + 1) * dst).min(hi);
            (b > a).then_some((i, (b - a) as u64))
        })
        .collect()
}

fn to_u8(v: f64) -> u8 {
    round_half_away(v).clamp(0.0, 255.0) as u8
}

/// Resamples `img` to `out_w × out_h`.
pub fn resize(img: &Image, out_w: usize, out_h: usize, method: InterpMethod) -> Result<Image> {
    if out_w == 0 || out_h == 0 {
        return Err(Error::InvalidArgument(format!(
            "resize target must be non-empty, got {out_w}x{out_h}"
        )));
    }
    if method == InterpMethod::Area && out_w <= img.width() && out_h <= img.height() {
        return Ok(area_downscale(img, out_w, out_h));
    }
    let (sw, sh) = (img.width(), img.height());
    let xt = axis_taps(sw, out_w, method);
    let yt = axis_taps(sh, out_h, method);

    let mut rows = vec![0f64; sh * out_w];
    for y in 0..sh {
        let src = &img.pixels()[y * sw..(y + 1) * sw];
        for (dx, taps) in xt.iter().enumerate() {
            rows[y * out_w + dx] = taps.iter().map(|&(i, w)| src[i] as f64 * w).sum();
        }
    }
    let mut out = Vec::with_capacity(out_w * out_h);
    for taps in &yt {
        for dx in 0..out_w {
            let v: f64 = taps.iter().map(|&(j, w)| rows[j * out_w + dx] * w).sum();
            out.push(to_u8(v));
        }
    }
    Image::new(out_w, out_h, out)
}

/// Exact integer box filter: every output is the coverage-weighted mean of
/// the source pixels under its footprint, rounded half away from zero.
fn area_downscale(img: &Image, out_w: usize, out_h: usize) -> Image {
    let (sw, sh) = (img.width(), img.height());
    let xw: Vec<_> = (0..out_w).map(|d| area_weights(sw, out_w, d)).collect();
    let yw: Vec<_> = (0..out_h).map(|d| area_weights(sh, out_h, d)).collect();

    let mut rows = vec![0u64; sh * out_w];
    for y in 0..sh {
        let src = &img.pixels()[y * sw..(y + 1) * sw];
        for (dx, taps) in xw.iter().enumerate() {
            rows[y * out_w + dx] = taps.iter().map(|&(i, w)| src[i] as u64 * w).sum();
        }
    }
    let den = (sw * sh) as u64;
    let mut out = Vec::with_capacity(out_w * out_h);
    for taps in &yw {
        for dx in 0..out_w {
            let num: u64 = taps.iter().map(|&(j, w)| rows[j * out_w + dx] * w).sum();
            out.push(((2 * num + den) / (2 * den)).min(255) as u8);
        }
    }
    Image::new(out_w, out_h, out).expect("positive output size")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn block_mean_oracle(img: &Image, fx: usize, fy: usize) -> Image {
        let (ow, oh) = (img.width() / fx, img.height() / fy);
        Image::from_fn(ow, oh, |x, y| {
            let mut sum = 0u32;
            for j in 0..fy {
                for i in 0..fx {
                    sum += img.get(x * fx + i, y * fy + j) as u32;
                }
            }
            let n = (fx * fy) as u32;
            ((2 * sum + n) / (2 * n)) as u8
        })
        .unwrap()
    }

    #[test]
    fn constant_images_stay_constant() {
        for v in [0u8, 1, 77, 128, 254, 255] {
            let img = Image::filled(13, 9, v).unwrap();
            for m in InterpMethod::ALL {
                for (w, h) in [(4, 3), (13, 9), (30, 17), (1, 1)] {
                    let out = resize(&img, w, h, m).unwrap();
                    assert!(out.pixels().iter().all(|&p| p == v), "{m} {w}x{h} value {v}");
                }
            }
        }
    }

    #[test]
    fn same_size_is_identity() {
        let img = Image::from_fn(11, 7, |x, y| ((x * 37 + y * 91) % 256) as u8).unwrap();
        for m in InterpMethod::ALL {
            assert_eq!(resize(&img, 11, 7, m).unwrap(), img, "{m}");
        }
    }

    #[test]
    fn area_4x4_block_means() {
        let img = Image::from_fn(4, 4, |c, r| (16 * r + c) as u8).unwrap();
        let out = resize(&img, 2, 2, InterpMethod::Area).unwrap();
        // (0+1+16+17)/4 = 8.5 -> 9, and so on
        assert_eq!(out.pixels(), &[9, 11, 41, 43]);
        assert_eq!(out, block_mean_oracle(&img, 2, 2));
    }

    #[test]
    fn nearest_upscale_replicates() {
        let img = Image::new(2, 2, vec![0, 100, 200, 255]).unwrap();
        let out = resize(&img, 4, 4, InterpMethod::Nearest).unwrap();
        #[rustfmt::skip]
        let expected = [
            0, 0, 100, 100,
            0, 0, 100, 100,
            200, 200, 255, 255,
            200, 200, 255, 255,
        ];
        assert_eq!(out.pixels(), &expected);
    }

    #[test]
    fn cubic_kernels_follow_linear_ramp() {
        let img = Image::from_fn(64, 4, |x, _| (x * 4) as u8).unwrap();
        for m in [InterpMethod::Bicubic, InterpMethod::Lanczos4, InterpMethod::Bilinear] {
            let out = resize(&img, 100, 4, m).unwrap();
            for dx in 8..92 {
                let c = (dx as f64 + 0.5) * 64.0 / 100.0 - 0.5;
                let expected = 4.0 * c;
                let got = out.get(dx, 1) as f64;
                assert!((got - expected).abs() <= 1.0, "{m} at {dx}: {got} vs {expected}");
            }
        }
    }

    #[test]
    fn area_upscale_matches_bilinear() {
        let img = Image::from_fn(5, 5, |x, y| (x * 50 + y * 3) as u8).unwrap();
        assert_eq!(
            resize(&img, 12, 9, InterpMethod::Area).unwrap(),
            resize(&img, 12, 9, InterpMethod::Bilinear).unwrap()
        );
    }

    #[test]
    fn area_non_integer_ratio_is_coverage_mean() {
        // 3 -> 2: each output covers 1.5 source pixels
        let img = Image::new(3, 1, vec![0, 100, 200]).unwrap();
        let out = resize(&img, 2, 1, InterpMethod::Area).unwrap();
        // (0*1 + 100*0.5)/1.5 = 33.3 ; (100*0.5 + 200)/1.5 = 166.7
        assert_eq!(out.pixels(), &[33, 167]);
    }

    #[test]
    fn rejects_empty_target() {
        let img = Image::filled(2, 2, 0).unwrap();
        assert!(resize(&img, 0, 2, InterpMethod::Nearest).is_err());
    }

    #[test]
    fn parses_method_names() {
        for m in InterpMethod::ALL {
            assert_eq!(m.name().parse::<InterpMethod>().unwrap(), m);
        }
        assert!("cubic".parse::<InterpMethod>().is_err());
    }

    proptest! {
        #[test]
        fn area_matches_block_mean(fx in 1usize..=4, fy in 1usize..=4, ow in 1usize..=8, oh in 1usize..=8, seed: u64) {
            let (w, h) = ((ow * fx).min(32), (oh * fy).min(32));
            let (ow, oh) = (w / fx, h / fy);
            let mut state = seed | 1;
            let img = Image::from_fn(ow * fx, oh * fy, |_, _| {
                state ^= state << 13; state ^= state >> 7; state ^= state << 17;
                (state >> 24) as u8
            }).unwrap();
            prop_assert_eq!(resize(&img, ow, oh, InterpMethod::Area).unwrap(), block_mean_oracle(&img, fx, fy));
        }

        #[test]
        fn nearest_same_size_identity(w in 1usize..20, h in 1usize..20, v: u8) {
            let img = Image::from_fn(w, h, |x, y| v.wrapping_add((x * 7 + y * 13) as u8)).unwrap();
            prop_assert_eq!(resize(&img, w, h, InterpMethod::Nearest).unwrap(), img);
        }
    }
}
