use crate::NnError;
use serde::{Deserialize, Serialize};

/// Flat parameter storage for one network plus its Adam moment state.
///
/// `values` holds every trainable scalar in layer-declaration order.
/// `buffers` holds non-trainable state (batchnorm running mean/variance).
/// Cloning a `ParamSet` is how actor snapshots and target networks are made.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet {
    pub values: Vec<f64>,
    pub buffers: Vec<f64>,
    pub adam_m: Vec<f64>,
    pub adam_v: Vec<f64>,
    pub adam_t: u64,
}

impl ParamSet {
    pub fn zeros(n_values: usize, n_buffers: usize) -> Self {
        ParamSet {
            values: vec![0.0; n_values],
            buffers: vec![0.0; n_buffers],
            adam_m: vec![0.0; n_values],
            adam_v: vec![0.0; n_values],
            adam_t: 0,
        }
    }

    /// Target-network blend: `self <- tau * source + (1 - tau) * self`.
    ///
    /// Buffers follow the same blend so eval-mode batchnorm in target
    /// networks tracks the online statistics. Moment state is untouched
    /// (targets are never stepped directly).
    pub fn soft_update_from(&mut self, source: &ParamSet, tau: f64) {
        assert_eq!(self.values.len(), source.values.len());
        assert_eq!(self.buffers.len(), source.buffers.len());
        for (t, s) in self.values.iter_mut().zip(&source.values) {
            *t = tau * s + (1.0 - tau) * *t;
        }
        for (t, s) in self.buffers.iter_mut().zip(&source.buffers) {
            *t = tau * s + (1.0 - tau) * *t;
        }
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite()) && self.buffers.iter().all(|v| v.is_finite())
    }
}

/// Adam hyperparameters. Defaults follow the common settings with the
/// learning rate used throughout this project.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper {
            lr: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam update, in place. Increments the step counter.
pub fn adam_step(params: &mut ParamSet, grads: &[f64], hp: AdamHyper) -> Result<(), NnError> {
    if grads.len() != params.values.len() {
        return Err(NnError::ShapeMismatch(format!(
            "adam: {} grads for {} params",
            grads.len(),
            params.values.len()
        )));
    }
    params.adam_t += 1;
    let t = params.adam_t as i32;
    let bc1 = 1.0 - hp.beta1.powi(t);
    let bc2 = 1.0 - hp.beta2.powi(t);
    for i in 0..grads.len() {
        let g = grads[i];
        let m = hp.beta1 * params.adam_m[i] + (1.0 - hp.beta1) * g;
        let v = hp.beta2 * params.adam_v[i] + (1.0 - hp.beta2) * g * g;
        params.adam_m[i] = m;
        params.adam_v[i] = v;
        let m_hat = m / bc1;
        let v_hat = v / bc2;
        params.values[i] -= hp.lr * m_hat / (v_hat.sqrt() + hp.eps);
    }
    Ok(())
}
