//! Adam over the flattened trainable parameters, with bias correction and
//! the step-coefficient range clamp applied after every update.

use serde::{Deserialize, Serialize};

use super::{TrainConfig, UnfoldedGrads, UnfoldedParams};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    first_moment: Vec<f64>,
    second_moment: Vec<f64>,
    pub step_count: u64,
}

impl AdamState {
    pub fn new(n_params: usize) -> Self {
        Self {
            first_moment: vec![0.0; n_params],
            second_moment: vec![0.0; n_params],
            step_count: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.first_moment.len()
    }

    pub fn is_empty(&self) -> bool {
        self.first_moment.is_empty()
    }
}

/// One Adam update of `params` along `grads`. Step coefficients are
/// clamped back to `delta1 in [-1, 0]`, `delta2 in [0, 1]` afterwards.
pub fn adam_step(
    params: &mut UnfoldedParams,
    grads: &UnfoldedGrads,
    state: &mut AdamState,
    cfg: &TrainConfig,
) -> Result<()> {
    let g = grads.flatten(&params.variant);
    let mut theta = params.flatten_trainables();
    if g.len() != theta.len() {
        return Err(Error::DimensionMismatch(format!(
            "gradient has {} entries, parameters {}",
            g.len(),
            theta.len()
        )));
    }
    if state.len() != theta.len() {
        return Err(Error::DimensionMismatch(format!(
            "optimizer state has {} entries, parameters {}",
            state.len(),
            theta.len()
        )));
    }

    state.step_count += 1;
    let t = state.step_count as i32;
    let bias1 = 1.0 - cfg.adam_beta1.powi(t);
    let bias2 = 1.0 - cfg.adam_beta2.powi(t);

    for i in 0..theta.len() {
        let m = &mut state.first_moment[i];
        let v = &mut state.second_moment[i];
        *m = cfg.adam_beta1 * *m + (1.0 - cfg.adam_beta1) * g[i];
        *v = cfg.adam_beta2 * *v + (1.0 - cfg.adam_beta2) * g[i] * g[i];
        let m_hat = *m / bias1;
        let v_hat = *v / bias2;
        theta[i] -= cfg.optimizer_lr * m_hat / (v_hat.sqrt() + cfg.adam_eps);
    }

    params.write_trainables(&theta)?;
    params.clamp_deltas();
    Ok(())
}
