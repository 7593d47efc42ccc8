//! Memory budget check: serialized model size plus the largest pair of
//! live activation buffers.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::format::{size_breakdown, ModelFile, SizeBreakdown};
use crate::netgraph::Architecture;

/// Frame-buffer RAM of the target board: 496 KB.
pub const DEFAULT_BUDGET_BYTES: usize = 496 * 1024;
/// Largest model file observed to load on the target board: 220 KB.
pub const ADVISORY_MODEL_BYTES: usize = 220 * 1024;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FootprintReport {
    pub model_bytes: usize,
    pub estimated_scratch_bytes: usize,
    pub budget_bytes: usize,
    pub fits: bool,
    pub advisory_model_bytes: usize,
    pub within_advisory: bool,
}

/// Largest `input + output` activation size over all layers, at
/// `bytes_per_element`. Weightless reshapes count too.
pub fn scratch_bytes(arch: &Architecture, bytes_per_element: usize) -> Result<usize> {
    let shapes = arch.infer_shapes()?;
    let mut prev: usize = arch.input_shape.iter().product();
    let mut worst = 0;
    for s in shapes {
        let n: usize = s.iter().product();
        worst = worst.max(prev + n);
        prev = n;
    }
    Ok(worst * bytes_per_element)
}

/// Footprint of a model file. Quantized activations take one byte per
/// element, float ones four.
pub fn footprint(model: &ModelFile, budget_bytes: usize) -> Result<FootprintReport> {
    let sizes: SizeBreakdown = size_breakdown(model);
    let model_bytes = sizes.total();
    let width = if model.is_quantized() { 1 } else { 4 };
    let estimated_scratch_bytes = scratch_bytes(model.arch(), width)?;
    Ok(FootprintReport {
        model_bytes,
        estimated_scratch_bytes,
        budget_bytes,
        fits: model_bytes + estimated_scratch_bytes <= budget_bytes,
        advisory_model_bytes: ADVISORY_MODEL_BYTES,
        within_advisory: model_bytes <= ADVISORY_MODEL_BYTES,
    })
}
