//! Adam with bias-corrected moment estimates.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SvbError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps_hat: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 0.1,
            beta1: 0.9,
            beta2: 0.999,
            eps_hat: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_learning_rate(learning_rate: f64) -> Self {
        AdamConfig {
            learning_rate,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        // A zero learning rate is allowed: it freezes the parameters.
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(SvbError::InvalidConfig(format!(
                "learning rate must be finite and non-negative, got {}",
                self.learning_rate
            )));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(b > 0.0 && b < 1.0) {
                return Err(SvbError::InvalidConfig(format!(
                    "{name} must lie in (0, 1), got {b}"
                )));
            }
        }
        if !(self.eps_hat > 0.0 && self.eps_hat.is_finite()) {
            return Err(SvbError::InvalidConfig(format!(
                "eps_hat must be positive, got {}",
                self.eps_hat
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step_count: u64,
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
}

impl AdamState {
    pub fn new(dim: usize, config: AdamConfig) -> Result<Self> {
        config.validate()?;
        Ok(AdamState {
            config,
            step_count: 0,
            first_moment: vec![0.0; dim],
            second_moment: vec![0.0; dim],
        })
    }

    /// One descent step on `params` along `grad` (the gradient of the loss
    /// being minimized). Nothing is modified if `grad` is rejected.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) -> Result<()> {
        let n = self.first_moment.len();
        for len in [params.len(), grad.len()] {
            if len != n {
                return Err(SvbError::DimensionMismatch {
                    expected: n,
                    got: len,
                });
            }
        }
        if let Some(&g) = grad.iter().find(|g| !g.is_finite()) {
            return Err(SvbError::NonFinite {
                op: "adam_step",
                value: g,
            });
        }

        let AdamConfig {
            learning_rate,
            beta1,
            beta2,
            eps_hat,
        } = self.config;
        self.step_count += 1;
        let t = self.step_count as i32;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);

        for (((p, &g), m), v) in params
            .iter_mut()
            .zip(grad)
            .zip(self.first_moment.iter_mut())
            .zip(self.second_moment.iter_mut())
        {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= learning_rate * m_hat / (v_hat.sqrt() + eps_hat);
        }
        Ok(())
    }
}
