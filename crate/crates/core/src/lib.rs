//! Tiny convolutional classifiers on microcontroller-sized budgets.
//!
//! The crate covers the whole pipeline: float training, representative-set
//! calibration, full-integer int8 conversion, integer-only inference with
//! float32 inputs/outputs, and the tooling around it (datasets, the TQM1
//! model file, evaluation reports, memory footprint and the augmentation
//! comparison experiment).

pub mod dataset;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod footprint;
pub mod format;
pub mod imaging;
pub mod netgraph;
pub mod quant;
pub mod quantizer;
pub mod tensor;
pub mod trainer;

pub use dataset::{Dataset, Sample};
pub use error::{Error, FormatError, Result};
pub use eval::{agreement, evaluate, Classifier, EvalReport};
pub use experiment::{ExperimentConfig, ExperimentReport};
pub use footprint::{footprint, FootprintReport};
pub use format::{load_model, save_model, ModelFile};
pub use imaging::{Image, InterpMethod};
pub use netgraph::{Activation, Architecture, LayerSpec, ModelSpec, Padding};
pub use quant::{QuantParams, Range};
pub use quantizer::{calibrate, infer_quantized, quantize_model, CalibrationProfile, QuantizedModel};
pub use tensor::{QuantTensor, Tensor};
pub use trainer::{fit, Example, FitOutcome, TrainConfig};
