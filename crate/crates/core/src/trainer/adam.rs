use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Moment estimates for every weight tensor plus the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub t: u64,
}

impl AdamState {
    pub fn new(weights: &[Tensor]) -> Self {
        let zeros: Vec<Tensor> = weights.iter().map(|w| Tensor::zeros(w.shape())).collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamHyper {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        Self {
            learning_rate: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-7,
        }
    }
}

/// One bias-corrected Adam update, in place.
pub fn adam_step(
    weights: &mut [Tensor],
    grads: &[Tensor],
    state: &mut AdamState,
    hyper: &AdamHyper,
) -> Result<()> {
    if weights.len() != grads.len() || weights.len() != state.m.len() || weights.len() != state.v.len() {
        return Err(Error::Shape(format!(
            "adam: {} weights, {} gradients, {} moment tensors",
            weights.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for (i, (w, g)) in weights.iter().zip(grads).enumerate() {
        if w.shape() != g.shape() || w.shape() != state.m[i].shape() || w.shape() != state.v[i].shape() {
            return Err(Error::Shape(format!(
                "adam: tensor {i} has weight {:?}, gradient {:?}",
                w.shape(),
                g.shape()
            )));
        }
    }
    state.t += 1;
    let t = state.t as i32;
    let (b1, b2) = (hyper.beta1, hyper.beta2);
    let correction1 = 1.0 - b1.powi(t);
    let correction2 = 1.0 - b2.powi(t);
    for (i, w) in weights.iter_mut().enumerate() {
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        for (j, (wv, &gv)) in w.data_mut().iter_mut().zip(grads[i].data()).enumerate() {
            let g = gv as f64;
            let mj = b1 * m[j] as f64 + (1.0 - b1) * g;
            let vj = b2 * v[j] as f64 + (1.0 - b2) * g * g;
            m[j] = mj as f32;
            v[j] = vj as f32;
            let m_hat = mj / correction1;
            let v_hat = vj / correction2;
            *wv = (*wv as f64 - hyper.learning_rate * m_hat / (v_hat.sqrt() + hyper.epsilon)) as f32;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(v: f32) -> Vec<Tensor> {
        vec![Tensor::full(&[1], v)]
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut w = vec![Tensor::new(vec![3], vec![0.5, -1.0, 2.0]).unwrap()];
        let before = w.clone();
        let mut state = AdamState::new(&w);
        adam_step(&mut w, &[Tensor::zeros(&[3])], &mut state, &AdamHyper::default()).unwrap();
        assert_eq!(w, before);
        assert_eq!(state.t, 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut w = scalar(0.0);
        let mut state = AdamState::new(&w);
        adam_step(&mut w, &scalar(1.0), &mut state, &AdamHyper::default()).unwrap();
        let expected = -0.001 / (1.0 + 1e-7);
        assert!((w[0].data()[0] as f64 - expected).abs() < 1e-9);

        let mut w = scalar(0.0);
        let mut state = AdamState::new(&w);
        adam_step(&mut w, &scalar(-0.5), &mut state, &AdamHyper::default()).unwrap();
        assert!((w[0].data()[0] as f64 - 0.001).abs() < 1e-8);
    }

    #[test]
    fn step_counter_increments() {
        let mut w = scalar(1.0);
        let mut state = AdamState::new(&w);
        for k in 1..=3 {
            adam_step(&mut w, &scalar(0.3), &mut state, &AdamHyper::default()).unwrap();
            assert_eq!(state.t, k);
        }
    }

    #[test]
    fn rejects_shape_mismatch() {
        let mut w = scalar(1.0);
        let mut state = AdamState::new(&w);
        assert!(adam_step(&mut w, &[Tensor::zeros(&[2])], &mut state, &AdamHyper::default()).is_err());
        assert_eq!(state.t, 0);
    }
}
