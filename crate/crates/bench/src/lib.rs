//! Shared fixtures for the criterion benchmarks.

use microquant_core::{Image, Tensor};

/// Deterministic high-frequency test pattern.
pub fn pattern_image(width: usize, height: usize) -> Image {
    Image::from_fn(width, height, |x, y| ((x * x + 3 * y * y + 17 * x * y) % 256) as u8)
        .expect("positive dimensions")
}

/// Deterministic `[h, w, c]` tensor with values in [0, 1).
pub fn pattern_tensor(shape: &[usize]) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|i| ((i * 7919) % 1000) as f32 / 1000.0).collect();
    Tensor::new(shape.to_vec(), data).expect("valid shape")
}
