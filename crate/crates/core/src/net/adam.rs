use serde::{Deserialize, Serialize};

use super::NetworkParams;
use crate::error::{Error, Result};

/// Adam hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon_hat: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon_hat: 1e-8,
        }
    }
}

/// First/second moment accumulators and step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub m: NetworkParams,
    pub v: NetworkParams,
    pub step_count: u64,
}

impl AdamState {
    pub fn new(params: &NetworkParams, config: AdamConfig) -> Self {
        let zeros = NetworkParams::zeros(params.layer_dims()).expect("dims already validated");
        Self {
            config,
            m: zeros.clone(),
            v: zeros,
            step_count: 0,
        }
    }

    /// One bias-corrected Adam update of `params` in place.
    pub fn step(&mut self, params: &mut NetworkParams, gradient: &NetworkParams) -> Result<()> {
        if !params.same_shape(gradient) || !params.same_shape(&self.m) {
            return Err(Error::DimensionMismatch {
                expected: params.len(),
                got: gradient.len(),
                context: "adam gradient",
            });
        }
        let AdamConfig {
            learning_rate,
            beta1,
            beta2,
            epsilon_hat,
        } = self.config;
        self.step_count += 1;
        let t = self.step_count as i32;
        let bias1 = 1.0 - beta1.powi(t);
        let bias2 = 1.0 - beta2.powi(t);
        for (((p, g), m), v) in params
            .values_mut()
            .zip(gradient.values())
            .zip(self.m.values_mut())
            .zip(self.v.values_mut())
        {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let m_hat = *m / bias1;
            let v_hat = *v / bias2;
            *p -= learning_rate * m_hat / (v_hat.sqrt() + epsilon_hat);
        }
        Ok(())
    }
}

/// Functional form: returns the updated pair.
pub fn adam_step(
    params: &NetworkParams,
    state: &AdamState,
    gradient: &NetworkParams,
) -> Result<(NetworkParams, AdamState)> {
    let mut p = params.clone();
    let mut s = state.clone();
    s.step(&mut p, gradient)?;
    Ok((p, s))
}
