use serde::{Deserialize, Serialize};

use super::layers::Param;
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// First and second moment estimates for one parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Tensor,
    pub v: Tensor,
    pub step: u64,
}

impl AdamState {
    pub fn new(rows: usize, cols: usize) -> Self {
        AdamState { m: Tensor::zeros(rows, cols), v: Tensor::zeros(rows, cols), step: 0 }
    }
}

/// One bias-corrected Adam update of `params` in place.
///
/// A gradient that is identically zero leaves both the parameters and the
/// moment state untouched, so tensors that took no part in a batch (for
/// instance the idle branch of a dual-branch model) are not dragged along by
/// stale momentum.
pub fn adam_step(state: &mut AdamState, config: &AdamConfig, params: &mut Tensor, grads: &Tensor) -> Result<()> {
    if params.shape() != grads.shape() || state.m.shape() != grads.shape() {
        return Err(Error::Dimension(format!(
            "adam: params {:?}, grads {:?}, state {:?}",
            params.shape(),
            grads.shape(),
            state.m.shape()
        )));
    }
    if grads.data().iter().all(|&g| g == 0.0) {
        return Ok(());
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - config.beta1.powi(t);
    let bc2 = 1.0 - config.beta2.powi(t);
    let (b1, b2) = (config.beta1, config.beta2);
    let m = state.m.data_mut();
    let v = state.v.data_mut();
    for (i, (p, &g)) in params.data_mut().iter_mut().zip(grads.data()).enumerate() {
        m[i] = b1 * m[i] + (1.0 - b1) * g;
        v[i] = b2 * v[i] + (1.0 - b2) * g * g;
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        *p -= config.lr * m_hat / (v_hat.sqrt() + config.eps);
    }
    Ok(())
}

/// Adam over an ordered parameter list; state is allocated lazily on the
/// first step and keyed by position.
#[derive(Clone, Debug)]
pub struct Adam {
    pub config: AdamConfig,
    states: Vec<AdamState>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Adam { config, states: Vec::new() }
    }

    pub fn step(&mut self, params: Vec<&mut Param>) -> Result<()> {
        if self.states.is_empty() {
            self.states = params.iter().map(|p| AdamState::new(p.value.rows(), p.value.cols())).collect();
        }
        if self.states.len() != params.len() {
            return Err(Error::Dimension(format!("optimizer tracks {} tensors, given {}", self.states.len(), params.len())));
        }
        for (state, p) in self.states.iter_mut().zip(params) {
            adam_step(state, &self.config, &mut p.value, &p.grad)?;
        }
        Ok(())
    }

    pub fn states(&self) -> &[AdamState] {
        &self.states
    }
}
