use crate::error::{Error, Result};
use crate::layers::ParamId;
use crate::params::ParamStore;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Bias-corrected ADAM moments, one pair per parameter.
#[derive(Clone, Debug, Default)]
pub struct AdamState {
    config: AdamConfig,
    first: BTreeMap<ParamId, Vec<f64>>,
    second: BTreeMap<ParamId, Vec<f64>>,
    step: u64,
}

impl AdamState {
    pub fn new(config: AdamConfig) -> Self {
        AdamState {
            config,
            ..Default::default()
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Applies one update to every learnable parameter with a gradient in `grads`.
    pub fn adam_step(
        &mut self,
        params: &mut ParamStore,
        grads: &BTreeMap<ParamId, Vec<f64>>,
        lr: f64,
    ) -> Result<()> {
        for (id, g) in grads {
            if let Some(i) = g.iter().position(|v| !v.is_finite()) {
                return Err(Error::Training(format!(
                    "gradient of parameter {id} is not finite at entry {i}"
                )));
            }
        }
        self.step += 1;
        let AdamConfig { beta1, beta2, eps } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for (id, g) in grads {
            if !params.is_learnable(*id) {
                continue;
            }
            let mut theta = params.values(*id)?.to_vec();
            if theta.len() != g.len() {
                return Err(Error::dim("adam gradient", theta.len(), g.len()));
            }
            let m = self.first.entry(*id).or_insert_with(|| vec![0.0; g.len()]);
            let v = self.second.entry(*id).or_insert_with(|| vec![0.0; g.len()]);
            for i in 0..g.len() {
                m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                theta[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
            params.set_values(*id, theta)?;
        }
        Ok(())
    }
}
