//! Bias-corrected Adam.

use num_traits::Float;

use crate::inr::{InrGrads, InrParams};

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { learning_rate: 2e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// First/second moment accumulators shaped like the parameters.
#[derive(Debug, Clone)]
pub struct AdamState<T> {
    pub step: u64,
    pub m: InrGrads<T>,
    pub v: InrGrads<T>,
}

impl<T: Float> AdamState<T> {
    pub fn new(params: &InrParams<T>) -> Self {
        AdamState {
            step: 0,
            m: InrGrads::zeros_like(params),
            v: InrGrads::zeros_like(params),
        }
    }
}

/// One Adam update on a flat buffer; exposed so the update rule can be
/// exercised on scalar problems.
pub fn adam_update_slice<T: Float>(
    step: u64,
    params: &mut [T],
    grads: &[T],
    m: &mut [T],
    v: &mut [T],
    cfg: &AdamConfig,
) {
    let b1 = T::from(cfg.beta1).unwrap();
    let b2 = T::from(cfg.beta2).unwrap();
    let lr = T::from(cfg.learning_rate).unwrap();
    let eps = T::from(cfg.eps).unwrap();
    let one = T::one();
    let bc1 = one - T::from(cfg.beta1.powi(step as i32)).unwrap();
    let bc2 = one - T::from(cfg.beta2.powi(step as i32)).unwrap();
    for i in 0..params.len() {
        m[i] = b1 * m[i] + (one - b1) * grads[i];
        v[i] = b2 * v[i] + (one - b2) * grads[i] * grads[i];
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        params[i] = params[i] - lr * m_hat / (v_hat.sqrt() + eps);
    }
}

/// Apply one optimizer step to every layer.
pub fn adam_step<T: Float>(
    state: &mut AdamState<T>,
    params: &mut InrParams<T>,
    grads: &InrGrads<T>,
    cfg: &AdamConfig,
) {
    state.step += 1;
    let step = state.step;
    for (li, layer) in params.layers.iter_mut().enumerate() {
        adam_update_slice(
            step,
            &mut layer.weights,
            &grads.layers[li].weights,
            &mut state.m.layers[li].weights,
            &mut state.v.layers[li].weights,
            cfg,
        );
        adam_update_slice(
            step,
            &mut layer.bias,
            &grads.layers[li].bias,
            &mut state.m.layers[li].bias,
            &mut state.v.layers[li].bias,
            cfg,
        );
    }
}
