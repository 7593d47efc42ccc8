use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Floor applied to probabilities before taking the log.
pub const PROB_FLOOR: f64 = 1e-12;

/// Mean categorical cross-entropy of `probs` against one-hot `labels`, both
/// `[batch, classes]`.
pub fn cross_entropy_loss(probs: &Tensor, labels: &Tensor) -> Result<f32> {
    let &[batch, classes] = probs.shape() else {
        return Err(Error::Shape(format!(
            "probabilities must be [batch, classes], got {:?}",
            probs.shape()
        )));
    };
    if labels.shape() != probs.shape() {
        return Err(Error::Shape(format!(
            "labels {:?} do not match probabilities {:?}",
            labels.shape(),
            probs.shape()
        )));
    }
    let mut total = 0f64;
    for row in 0..batch {
        let p = &probs.data()[row * classes..][..classes];
        let y = &labels.data()[row * classes..][..classes];
        let sum: f64 = p.iter().map(|&v| v as f64).sum();
        if (sum - 1.0).abs() > 1e-4 {
            return Err(Error::InvalidArgument(format!(
                "probability row {row} sums to {sum}"
            )));
        }
        let ones = y.iter().filter(|&&v| v == 1.0).count();
        let zeros = y.iter().filter(|&&v| v == 0.0).count();
        if ones != 1 || ones + zeros != classes {
            return Err(Error::InvalidArgument(format!(
                "label row {row} is not one-hot"
            )));
        }
        total += sample_loss(p, crate::tensor::argmax(y));
    }
    Ok((total / batch as f64) as f32)
}

/// `-ln(p[label])` with the probability floor applied.
pub fn sample_loss(probs: &[f32], label: usize) -> f64 {
    -(probs[label] as f64).max(PROB_FLOOR).ln()
}

pub fn one_hot(labels: &[usize], classes: usize) -> Result<Tensor> {
    let mut data = vec![0f32; labels.len() * classes];
    for (row, &l) in labels.iter().enumerate() {
        if l >= classes {
            return Err(Error::InvalidArgument(format!(
                "label {l} out of range for {classes} classes"
            )));
        }
        data[row * classes + l] = 1.0;
    }
    Tensor::new(vec![labels.len(), classes], data)
}
