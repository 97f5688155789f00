use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Multiply the learning rate by `gamma` every `step_size` epochs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StepLr {
    pub base_lr: f64,
    pub step_size: u32,
    pub gamma: f64,
    #[serde(skip)]
    pub epoch: u32,
}

impl Default for StepLr {
    fn default() -> Self {
        Self {
            base_lr: 0.005,
            step_size: 10,
            gamma: 0.1,
            epoch: 0,
        }
    }
}

/// `base_lr · gamma^floor(epoch / step_size)`
pub fn step_lr(base_lr: f64, gamma: f64, step_size: u32, epoch: u32) -> f64 {
    base_lr * gamma.powi((epoch / step_size) as i32)
}

impl StepLr {
    pub fn new(base_lr: f64, step_size: u32, gamma: f64) -> Result<Self> {
        let s = Self {
            base_lr,
            step_size,
            gamma,
            epoch: 0,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.step_size < 1 || !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::BadConfig(format!(
                "step_lr needs step_size ≥ 1 and 0 < gamma ≤ 1 (got {}, {})",
                self.step_size, self.gamma
            )));
        }
        Ok(())
    }

    pub fn lr(&self) -> f64 {
        step_lr(self.base_lr, self.gamma, self.step_size, self.epoch)
    }

    /// Advance one epoch and return the new rate.
    pub fn step(&mut self) -> f64 {
        self.epoch += 1;
        self.lr()
    }
}
