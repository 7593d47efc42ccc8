//! Standard versus interpolation augmentation, trained and quantized side
//! by side.
//!
//! Both arms start from the same full-resolution sources, build training
//! sets of the same size, train the same architecture from the same
//! initialization and seeds, and are scored on the same test and
//! generalization sets. The only difference is how training variants are made:
//!
//! * `standard`: area downscale to 28×28, then random rotation, crop, resize
//!   and contrast;
//! * `interpolation`: the source resized straight to 28×28 with each of the
//!   five interpolation methods in turn.

use serde::{Deserialize, Serialize};

use crate::dataset::{
    synth_dataset_styled, synth_sources, Dataset, Sample, SynthStyle, CLASS_COUNT, IMAGE_SIDE,
};
use crate::error::{Error, Result};
use crate::eval::{agreement, evaluate};
use crate::imaging::{augment_standard, resize, AugmentParams, InterpMethod};
use crate::netgraph::{Architecture, ModelSpec};
use crate::quantizer::{quantize_with_representative, DEFAULT_REPRESENTATIVE_SAMPLES};
use crate::trainer::{fit, split_validation, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Augmentation {
    Standard,
    Interpolation,
}

impl Augmentation {
    pub fn name(self) -> &'static str {
        match self {
            Augmentation::Standard => "standard",
            Augmentation::Interpolation => "interpolation",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub arch: Architecture,
    pub train: TrainConfig,
    /// Training-set size of each arm; `None` means five variants per source.
    pub train_size: Option<usize>,
    pub representative_samples: usize,
    pub augment: AugmentParams,
    /// Use standard augmentation in both arms.
    pub control: bool,
    /// Synthetic data sizes, used by [`run_synthetic`].
    pub sources_per_class: usize,
    pub test_per_class: usize,
    pub generalization_per_class: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            arch: Architecture::reference(),
            train: TrainConfig {
                epochs: 20,
                ..TrainConfig::default()
            },
            train_size: None,
            representative_samples: DEFAULT_REPRESENTATIVE_SAMPLES,
            augment: AugmentParams::default(),
            control: false,
            sources_per_class: 10,
            test_per_class: 10,
            generalization_per_class: 10,
        }
    }
}

/// One row of the comparison table. Accuracies are fractions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmReport {
    pub augmentation: Augmentation,
    pub train_size: usize,
    pub best_epoch: usize,
    pub train_accuracy: f64,
    pub float_test_accuracy: f64,
    pub int8_test_accuracy: f64,
    /// Int8 model on the generalization set.
    pub generalization_accuracy: f64,
    /// `float_test_accuracy - int8_test_accuracy`.
    pub quantization_drop: f64,
    pub float_int8_agreement: f64,
}

impl ArmReport {
    /// The four accuracy columns, for comparing rows.
    pub fn accuracies(&self) -> [f64; 4] {
        [
            self.train_accuracy,
            self.float_test_accuracy,
            self.int8_test_accuracy,
            self.generalization_accuracy,
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub seed: u64,
    pub control: bool,
    pub source_count: usize,
    pub test_count: usize,
    pub generalization_count: usize,
    pub rows: Vec<ArmReport>,
}

impl ExperimentReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn write_csv(&self, out: impl std::io::Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for row in &self.rows {
            w.serialize(row)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn seed_for(base: u64, index: usize) -> u64 {
    base.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ (index as u64).wrapping_add(1).wrapping_mul(0xbf58_476d_1ce4_e5b9)
}

/// Builds one arm's training set of exactly `size` samples, cycling through
/// the sources.
pub fn build_training_set(
    sources: &Dataset,
    kind: Augmentation,
    size: usize,
    augment: &AugmentParams,
) -> Result<Dataset> {
    let n = sources.len();
    if n == 0 {
        return Err(Error::EmptyDataset("no source images".into()));
    }
    let mut samples = Vec::with_capacity(size);
    for j in 0..size {
        let src = &sources.samples()[j % n];
        let round = j / n;
        let (image, how) = match kind {
            Augmentation::Standard => {
                let base = resize(&src.image, IMAGE_SIDE, IMAGE_SIDE, InterpMethod::Area)?;
                let params = AugmentParams {
                    seed: seed_for(augment.seed, j),
                    target_size: IMAGE_SIDE,
                    ..*augment
                };
                (augment_standard(&base, &params)?, "standard".to_string())
            }
            Augmentation::Interpolation => {
                let m = InterpMethod::ALL[round % InterpMethod::ALL.len()];
                (resize(&src.image, IMAGE_SIDE, IMAGE_SIDE, m)?, m.name().to_string())
            }
        };
        samples.push(Sample {
            image,
            label: src.label,
            provenance: format!("{}+{how}#{round}", src.provenance),
        });
    }
    Dataset::new(samples, sources.class_count())
}

fn run_arm(
    kind: Augmentation,
    sources: &Dataset,
    test: &Dataset,
    generalization: &Dataset,
    cfg: &ExperimentConfig,
    train_size: usize,
) -> Result<ArmReport> {
    let augment = AugmentParams {
        seed: cfg.train.seed,
        ..cfg.augment
    };
    let train_set = build_training_set(sources, kind, train_size, &augment)?;
    let examples = train_set.examples();
    let (train, val) = split_validation(&examples, cfg.train.validation_split, cfg.train.seed);
    let init = ModelSpec::he_uniform(cfg.arch.clone(), cfg.train.seed)?;
    let outcome = fit(init, &train, &val, &cfg.train)?;
    let model = outcome.model;

    let representative: Vec<_> = test
        .examples()
        .into_iter()
        .take(cfg.representative_samples.max(1))
        .map(|e| e.input)
        .collect();
    let qm = quantize_with_representative(&model, &representative)?;

    let train_accuracy = evaluate(&model, &train_set)?.accuracy;
    let float_test_accuracy = evaluate(&model, test)?.accuracy;
    let int8_test_accuracy = evaluate(&qm, test)?.accuracy;
    let generalization_accuracy = evaluate(&qm, generalization)?.accuracy;
    log::info!(
        "{}: train {train_accuracy:.4} test {float_test_accuracy:.4} int8 {int8_test_accuracy:.4} gen {generalization_accuracy:.4}",
        kind.name()
    );
    Ok(ArmReport {
        augmentation: kind,
        train_size,
        best_epoch: outcome.best_epoch,
        train_accuracy,
        float_test_accuracy,
        int8_test_accuracy,
        generalization_accuracy,
        quantization_drop: float_test_accuracy - int8_test_accuracy,
        float_int8_agreement: agreement(&model, &qm, test)?,
    })
}

/// Runs both arms on the given data. `sources` are full-resolution images;
/// `test` and `generalization` are already 28×28.
pub fn run_experiment(
    sources: &Dataset,
    test: &Dataset,
    generalization: &Dataset,
    cfg: &ExperimentConfig,
) -> Result<ExperimentReport> {
    let missing: Vec<usize> = sources
        .class_histogram()
        .iter()
        .enumerate()
        .filter(|(_, &n)| n == 0)
        .map(|(c, _)| c)
        .collect();
    if sources.is_empty() || !missing.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "need at least one source image per class; classes without any: {missing:?}"
        )));
    }
    let classes = cfg.arch.class_count()?;
    if sources.class_count() > classes {
        return Err(Error::InvalidArgument(format!(
            "{} source classes but the model has {classes} outputs",
            sources.class_count()
        )));
    }
    let train_size = cfg
        .train_size
        .unwrap_or(sources.len() * InterpMethod::ALL.len());
    let second = if cfg.control {
        Augmentation::Standard
    } else {
        Augmentation::Interpolation
    };
    let rows = [Augmentation::Standard, second]
        .into_iter()
        .map(|kind| run_arm(kind, sources, test, generalization, cfg, train_size))
        .collect::<Result<_>>()?;
    Ok(ExperimentReport {
        seed: cfg.train.seed,
        control: cfg.control,
        source_count: sources.len(),
        test_count: test.len(),
        generalization_count: generalization.len(),
        rows,
    })
}

/// Generates synthetic sources, test and generalization sets from the seed
/// and runs the comparison. The test set uses a different seed from the
/// sources; the generalization set uses the cluttered style.
pub fn run_synthetic(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    let classes = cfg.arch.class_count()?.min(CLASS_COUNT);
    let seed = cfg.train.seed;
    let sources = synth_sources(classes, cfg.sources_per_class, seed, SynthStyle::Clean)?;
    let test = synth_dataset_styled(classes, cfg.test_per_class, seed.wrapping_add(1_000_003), SynthStyle::Clean)?;
    let generalization = synth_dataset_styled(
        classes,
        cfg.generalization_per_class,
        seed.wrapping_add(2_000_003),
        SynthStyle::Cluttered,
    )?;
    run_experiment(&sources, &test, &generalization, cfg)
}
