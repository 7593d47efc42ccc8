//! Accuracy, confusion matrices and float/int8 agreement.
//!
//! Predictions are the argmax of the model output; ties go to the lowest
//! class index everywhere in the crate.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::imaging::normalize;
use crate::netgraph::ModelSpec;
use crate::quantizer::{infer_quantized, QuantizedModel};
use crate::tensor::Tensor;

/// Anything that maps a normalized image to class scores.
pub trait Classifier: Sync {
    fn class_count(&self) -> Result<usize>;
    fn scores(&self, input: &Tensor) -> Result<Tensor>;

    fn predict(&self, input: &Tensor) -> Result<usize> {
        Ok(self.scores(input)?.argmax())
    }
}

impl Classifier for ModelSpec {
    fn class_count(&self) -> Result<usize> {
        self.arch.class_count()
    }

    fn scores(&self, input: &Tensor) -> Result<Tensor> {
        self.forward(input)
    }
}

impl Classifier for QuantizedModel {
    fn class_count(&self) -> Result<usize> {
        self.arch.class_count()
    }

    fn scores(&self, input: &Tensor) -> Result<Tensor> {
        infer_quantized(self, input)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracy: f64,
    /// `confusion[truth][prediction]`.
    pub confusion: Vec<Vec<u64>>,
    /// `None` for classes that were never predicted.
    pub precision: Vec<Option<f64>>,
    /// `None` for classes absent from the data.
    pub recall: Vec<Option<f64>>,
    pub sample_count: u64,
}

impl EvalReport {
    pub fn from_confusion(confusion: Vec<Vec<u64>>) -> Self {
        let n = confusion.len();
        let sample_count: u64 = confusion.iter().flatten().sum();
        let trace: u64 = (0..n).map(|i| confusion[i][i]).sum();
        let ratio = |num: u64, den: u64| (den > 0).then(|| num as f64 / den as f64);
        let precision = (0..n)
            .map(|c| ratio(confusion[c][c], (0..n).map(|t| confusion[t][c]).sum()))
            .collect();
        let recall = (0..n)
            .map(|c| ratio(confusion[c][c], confusion[c].iter().sum()))
            .collect();
        Self {
            accuracy: if sample_count == 0 {
                0.0
            } else {
                trace as f64 / sample_count as f64
            },
            confusion,
            precision,
            recall,
            sample_count,
        }
    }

    pub fn correct(&self) -> u64 {
        (0..self.confusion.len()).map(|i| self.confusion[i][i]).sum()
    }
}

fn predictions<C: Classifier + ?Sized>(model: &C, ds: &Dataset) -> Result<Vec<usize>> {
    ds.samples()
        .par_iter()
        .map(|s| model.predict(&normalize(&s.image)))
        .collect()
}

/// Runs `model` over every sample of `ds`.
pub fn evaluate<C: Classifier + ?Sized>(model: &C, ds: &Dataset) -> Result<EvalReport> {
    if ds.is_empty() {
        return Err(Error::EmptyDataset("cannot evaluate on an empty dataset".into()));
    }
    let classes = model.class_count()?;
    if let Some(s) = ds.samples().iter().find(|s| s.label >= classes) {
        return Err(Error::InvalidArgument(format!(
            "sample label {} exceeds the model's {classes} classes",
            s.label
        )));
    }
    let preds = predictions(model, ds)?;
    let mut confusion = vec![vec![0u64; classes]; classes];
    for (s, p) in ds.samples().iter().zip(preds) {
        confusion[s.label][p] += 1;
    }
    Ok(EvalReport::from_confusion(confusion))
}

/// Fraction of samples where the float and integer models pick the same class.
pub fn agreement(float: &ModelSpec, quantized: &QuantizedModel, ds: &Dataset) -> Result<f64> {
    if float.arch != quantized.arch {
        return Err(Error::InvalidArgument(
            "float and quantized models have different architectures".into(),
        ));
    }
    if ds.is_empty() {
        return Err(Error::EmptyDataset("cannot compare on an empty dataset".into()));
    }
    let a = predictions(float, ds)?;
    let b = predictions(quantized, ds)?;
    let same = a.iter().zip(&b).filter(|(x, y)| x == y).count();
    Ok(same as f64 / ds.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{synth_dataset, Sample};
    use crate::imaging::Image;
    use crate::netgraph::{Activation, Architecture, LayerSpec};
    use crate::quantizer::quantize_with_representative;

    fn zero_model(classes: usize) -> ModelSpec {
        ModelSpec::zeros(Architecture {
            input_shape: vec![28, 28, 1],
            layers: vec![
                LayerSpec::Flatten,
                LayerSpec::Dense {
                    in_features: 784,
                    out_features: classes,
                    activation: Activation::Softmax,
                },
            ],
        })
        .unwrap()
    }

    fn all_class(label: usize, n: usize) -> Dataset {
        let samples = (0..n)
            .map(|i| Sample {
                image: Image::filled(28, 28, (i * 9) as u8).unwrap(),
                label,
                provenance: String::new(),
            })
            .collect();
        Dataset::new(samples, 24).unwrap()
    }

    #[test]
    fn constant_predictor_on_its_class() {
        let m = zero_model(24);
        let r = evaluate(&m, &all_class(0, 7)).unwrap();
        assert_eq!(r.accuracy, 1.0);
        assert_eq!(r.sample_count, 7);
        assert_eq!(r.confusion[0][0], 7);
        assert_eq!(r.recall[0], Some(1.0));
        assert_eq!(r.precision[1], None);
        let r = evaluate(&m, &all_class(3, 5)).unwrap();
        assert_eq!(r.accuracy, 0.0);
        assert_eq!(r.confusion[3][0], 5);
    }

    struct HashLogits;

    impl Classifier for HashLogits {
        fn class_count(&self) -> Result<usize> {
            Ok(24)
        }

        fn scores(&self, input: &Tensor) -> Result<Tensor> {
            let mut h: u64 = 0xcbf2_9ce4_8422_2325;
            for v in input.data() {
                h = (h ^ v.to_bits() as u64).wrapping_mul(0x1000_0000_01b3);
            }
            let data = (0..24u64)
                .map(|c| ((h ^ c.wrapping_mul(0x9e37_79b9_7f4a_7c15)).wrapping_mul(0xff51_afd7_ed55_8ccd) >> 40) as f32)
                .collect();
            Tensor::new(vec![24], data)
        }
    }

    #[test]
    fn random_scores_give_chance_accuracy() {
        let ds = synth_dataset(24, 40, 9).unwrap();
        let r = evaluate(&HashLogits, &ds).unwrap();
        let n = ds.len() as f64;
        let p = 1.0 / 24.0;
        let sigma = (p * (1.0 - p) / n).sqrt();
        assert!((r.accuracy - p).abs() <= 3.0 * sigma, "{}", r.accuracy);
    }

    #[test]
    fn counting_identities_and_order_invariance() {
        let ds = synth_dataset(24, 3, 2).unwrap();
        let m = ModelSpec::he_uniform(zero_model(24).arch, 1).unwrap();
        let r = evaluate(&m, &ds).unwrap();
        let total: u64 = r.confusion.iter().flatten().sum();
        assert_eq!(total, r.sample_count);
        for (c, row) in r.confusion.iter().enumerate() {
            assert_eq!(row.iter().sum::<u64>(), ds.class_histogram()[c] as u64);
        }
        assert_eq!(r.accuracy, r.correct() as f64 / r.sample_count as f64);

        let mut rev = ds.samples().to_vec();
        rev.reverse();
        let r2 = evaluate(&m, &Dataset::new(rev, 24).unwrap()).unwrap();
        assert_eq!(r, r2);
    }

    #[test]
    fn agreement_cases() {
        let ds = synth_dataset(24, 2, 4).unwrap();
        let zero = zero_model(24);
        let q = quantize_with_representative(&zero, &ds.examples().into_iter().map(|e| e.input).collect::<Vec<_>>())
            .unwrap();
        assert_eq!(agreement(&zero, &q, &ds).unwrap(), 1.0);
        let other = zero_model(5);
        assert!(agreement(&other, &q, &ds).is_err());
        assert!(evaluate(&zero, &Dataset::new(vec![], 24).unwrap()).is_err());
    }
}
