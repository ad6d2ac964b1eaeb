use serde::{Deserialize, Serialize};

use super::{Network, NetworkGrads};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let in_unit = |b: f64| b > 0.0 && b < 1.0;
        if !in_unit(self.beta1) || !in_unit(self.beta2) {
            return Err(Error::InvalidConfig(format!(
                "Adam betas must lie in (0, 1), got {} and {}",
                self.beta1, self.beta2
            )));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.epsilon.is_nan() || self.epsilon <= 0.0 {
            return Err(Error::InvalidConfig("Adam epsilon must be positive".into()));
        }
        Ok(())
    }
}

/// First and second moment accumulators for one [`Network`].
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    first: NetworkGrads,
    second: NetworkGrads,
}

impl AdamState {
    pub fn new(net: &Network, config: AdamConfig) -> Result<Self> {
        config.validate()?;
        Ok(AdamState {
            config,
            step: 0,
            first: NetworkGrads::zeros_like(net),
            second: NetworkGrads::zeros_like(net),
        })
    }
}

/// Applies one bias-corrected Adam update in place and advances the step counter.
pub fn adam_step(params: &mut Network, grads: &NetworkGrads, state: &mut AdamState) -> Result<()> {
    let template = NetworkGrads::zeros_like(params);
    if !template.same_shape(grads) || !template.same_shape(&state.first) {
        return Err(Error::Shape(
            "parameters, gradients and optimizer state disagree".into(),
        ));
    }
    state.step += 1;
    let AdamConfig {
        learning_rate,
        beta1,
        beta2,
        epsilon,
    } = state.config;
    let t = state.step as i32;
    let correction1 = 1.0 - beta1.powi(t);
    let correction2 = 1.0 - beta2.powi(t);

    let slices = params
        .slices_mut()
        .zip(grads.slices())
        .zip(state.first.slices_mut().zip(state.second.slices_mut()));
    for ((theta, g), (m, v)) in slices {
        for i in 0..theta.len() {
            m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
            v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
            let m_hat = m[i] / correction1;
            let v_hat = v[i] / correction2;
            theta[i] -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
        }
    }
    Ok(())
}
