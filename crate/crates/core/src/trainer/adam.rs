//! ADAM optimizer with bias correction.

use crate::diffcomp::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Real;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// First/second moment accumulators, one pair per parameter tensor.
#[derive(Clone, Debug)]
pub struct AdamState<R: Real> {
    m: Vec<Tensor<R>>,
    v: Vec<Tensor<R>>,
    step: u64,
}

impl<R: Real> AdamState<R> {
    /// Zero-initialized state mirroring the given parameter shapes.
    pub fn new(params: &[Tensor<R>]) -> Self {
        let zeros: Vec<Tensor<R>> = params.iter().map(|t| Tensor::zeros(t.shape())).collect();
        Self { m: zeros.clone(), v: zeros, step: 0 }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One bias-corrected ADAM update, in place. Gradients must be finite and
/// shape-matched to the parameters.
pub fn adam_step<R: Real>(
    params: &mut [Tensor<R>],
    grads: &[Tensor<R>],
    state: &mut AdamState<R>,
    lr: f64,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::invalid(format!(
            "optimizer saw {} parameters, {} gradients, state for {}",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for (p, g) in params.iter().zip(grads) {
        if p.shape() != g.shape() {
            return Err(Error::shape(
                "adam_step",
                format!("{:?}", p.shape()),
                format!("{:?}", g.shape()),
            ));
        }
        if !g.is_finite() {
            return Err(Error::NonFinite("gradient passed to adam_step"));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let b1 = R::of(BETA1);
    let b2 = R::of(BETA2);
    let one = R::one();
    let bc1 = one - b1.powi(t);
    let bc2 = one - b2.powi(t);
    let lr = R::of(lr);
    let eps = R::of(EPSILON);
    for (((p, g), m), v) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut())
        .zip(state.v.iter_mut())
    {
        let pd = p.data_mut();
        let md = m.data_mut();
        let vd = v.data_mut();
        for i in 0..pd.len() {
            let gi = g.data()[i];
            md[i] = b1 * md[i] + (one - b1) * gi;
            vd[i] = b2 * vd[i] + (one - b2) * gi * gi;
            let m_hat = md[i] / bc1;
            let v_hat = vd[i] / bc2;
            pd[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut params = vec![Tensor::new(vec![2], vec![1.5f64, -0.5]).unwrap()];
        let grads = vec![Tensor::zeros(&[2])];
        let mut state = AdamState::new(&params);
        adam_step(&mut params, &grads, &mut state, 0.1).unwrap();
        assert_eq!(params[0].data(), &[1.5, -0.5]);
    }

    #[test]
    fn constant_gradient_update_approaches_lr_times_sign() {
        let mut params = vec![Tensor::new(vec![1], vec![0.0f64]).unwrap()];
        let grads = vec![Tensor::new(vec![1], vec![3.0f64]).unwrap()];
        let mut state = AdamState::new(&params);
        let lr = 0.01;
        let mut prev = params[0].data()[0];
        let mut last_delta = 0.0;
        for _ in 0..200 {
            adam_step(&mut params, &grads, &mut state, lr).unwrap();
            last_delta = params[0].data()[0] - prev;
            prev = params[0].data()[0];
        }
        assert_relative_eq!(last_delta, -lr, max_relative = 1e-3);
    }

    #[test]
    fn two_steps_match_hand_arithmetic() {
        // Scalar parameter p=1, gradients g1=0.5, g2=-0.25, lr=0.1.
        let mut params = vec![Tensor::new(vec![1], vec![1.0f64]).unwrap()];
        let mut state = AdamState::new(&params);
        let lr = 0.1;

        let g1 = 0.5;
        adam_step(&mut params, &[Tensor::new(vec![1], vec![g1]).unwrap()], &mut state, lr)
            .unwrap();
        let m1 = 0.1 * g1;
        let v1 = 0.001 * g1 * g1;
        let p1 = 1.0 - lr * (m1 / 0.1) / ((v1 / 0.001).sqrt() + 1e-8);
        assert_relative_eq!(params[0].data()[0], p1, epsilon = 1e-15);

        let g2 = -0.25;
        adam_step(&mut params, &[Tensor::new(vec![1], vec![g2]).unwrap()], &mut state, lr)
            .unwrap();
        let m2 = 0.9 * m1 + 0.1 * g2;
        let v2 = 0.999 * v1 + 0.001 * g2 * g2;
        let bc1 = 1.0 - 0.9f64.powi(2);
        let bc2 = 1.0 - 0.999f64.powi(2);
        let p2 = p1 - lr * (m2 / bc1) / ((v2 / bc2).sqrt() + 1e-8);
        assert_relative_eq!(params[0].data()[0], p2, epsilon = 1e-15);
    }

    #[test]
    fn non_finite_gradients_are_rejected() {
        let mut params = vec![Tensor::new(vec![1], vec![1.0f64]).unwrap()];
        let mut state = AdamState::new(&params);
        let mut bad = Tensor::<f64>::zeros(&[1]);
        bad.data_mut()[0] = f64::NAN;
        assert!(adam_step(&mut params, &[bad], &mut state, 0.1).is_err());
    }
}
