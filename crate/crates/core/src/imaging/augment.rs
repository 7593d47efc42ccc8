use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{resize, Image, InterpMethod};
use crate::error::{Error, Result};
use crate::quant::round_half_away;

/// Rotation about the image center with bilinear sampling. Positive angles
/// turn the content clockwise on screen (y axis down); uncovered pixels are
/// black.
pub fn rotate(img: &Image, degrees: f64) -> Image {
    if degrees == 0.0 {
        return img.clone();
    }
    let (w, h) = (img.width(), img.height());
    let (sin, cos) = degrees.to_radians().sin_cos();
    let cx = (w as f64 - 1.0) / 2.0;
    let cy = (h as f64 - 1.0) / 2.0;
    let tap = |x: isize, y: isize| -> f64 {
        if x < 0 || y < 0 || x >= w as isize || y >= h as isize {
            0.0
        } else {
            img.get(x as usize, y as usize) as f64
        }
    };
    Image::from_fn(w, h, |x, y| {
        let dx = x as f64 - cx;
        let dy = y as f64 - cy;
        let sx = cx + cos * dx + sin * dy;
        let sy = cy - sin * dx + cos * dy;
        let x0 = sx.floor();
        let y0 = sy.floor();
        let fx = sx - x0;
        let fy = sy - y0;
        let (x0, y0) = (x0 as isize, y0 as isize);
        let top = tap(x0, y0) * (1.0 - fx) + tap(x0 + 1, y0) * fx;
        let bottom = tap(x0, y0 + 1) * (1.0 - fx) + tap(x0 + 1, y0 + 1) * fx;
        round_half_away(top * (1.0 - fy) + bottom * fy).clamp(0.0, 255.0) as u8
    })
    .expect("same dimensions as a valid image")
}

pub fn crop(img: &Image, x: usize, y: usize, w: usize, h: usize) -> Result<Image> {
    if w == 0 || h == 0 || x + w > img.width() || y + h > img.height() {
        return Err(Error::InvalidArgument(format!(
            "crop ({x},{y},{w},{h}) does not fit in {}x{} image",
            img.width(),
            img.height()
        )));
    }
    Image::from_fn(w, h, |cx, cy| img.get(x + cx, y + cy))
}

/// Stretches pixel values around mid-gray 128 by `factor`.
pub fn adjust_contrast(img: &Image, factor: f64) -> Image {
    let lut: Vec<u8> = (0..=255u8)
        .map(|p| round_half_away(128.0 + factor * (p as f64 - 128.0)).clamp(0.0, 255.0) as u8)
        .collect();
    Image::new(
        img.width(),
        img.height(),
        img.pixels().iter().map(|&p| lut[p as usize]).collect(),
    )
    .expect("same dimensions as a valid image")
}

/// Knobs for the rotate/crop/resize/contrast augmentation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentParams {
    pub rotation_degrees_max: f64,
    pub crop_size: usize,
    pub target_size: usize,
    /// Half-width of the uniform contrast factor interval around 1.
    pub contrast_jitter: f64,
    pub seed: u64,
}

impl Default for AugmentParams {
    fn default() -> Self {
        Self {
            rotation_degrees_max: 20.0,
            crop_size: 20,
            target_size: 28,
            contrast_jitter: 0.1,
            seed: 0,
        }
    }
}

fn symmetric_uniform(rng: &mut ChaCha8Rng, half_width: f64) -> f64 {
    // always draw, so the stream position does not depend on the parameters
    let u: f64 = rng.gen();
    (2.0 * u - 1.0) * half_width
}

/// Random rotation, random square crop, bilinear resize to the target size
/// and a random contrast factor. Deterministic in `(img, params)`.
pub fn augment_standard(img: &Image, params: &AugmentParams) -> Result<Image> {
    if !(params.rotation_degrees_max >= 0.0 && params.rotation_degrees_max.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "rotation_degrees_max must be finite and non-negative, got {}",
            params.rotation_degrees_max
        )));
    }
    if !(params.contrast_jitter >= 0.0 && params.contrast_jitter < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "contrast_jitter must lie in [0, 1), got {}",
            params.contrast_jitter
        )));
    }
    let c = params.crop_size;
    if c == 0 || c > img.width() || c > img.height() {
        return Err(Error::InvalidArgument(format!(
            "crop size {c} does not fit in {}x{} image",
            img.width(),
            img.height()
        )));
    }
    if params.target_size == 0 {
        return Err(Error::InvalidArgument("target size must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let angle = symmetric_uniform(&mut rng, params.rotation_degrees_max);
    let x = rng.gen_range(0..=img.width() - c);
    let y = rng.gen_range(0..=img.height() - c);
    let factor = 1.0 + symmetric_uniform(&mut rng, params.contrast_jitter);

    let rotated = rotate(img, angle);
    let cropped = crop(&rotated, x, y, c, c)?;
    let resized = resize(
        &cropped,
        params.target_size,
        params.target_size,
        InterpMethod::Bilinear,
    )?;
    Ok(adjust_contrast(&resized, factor))
}

/// One `target × target` resize per interpolation method, in
/// [`InterpMethod::ALL`] order.
pub fn augment_interpolation(img: &Image, target: usize) -> Result<Vec<Image>> {
    InterpMethod::ALL
        .iter()
        .map(|&m| resize(img, target, target, m))
        .collect()
}
