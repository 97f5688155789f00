use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::autograd::Parameter;
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 0.005,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let beta_ok = |b: f64| (0.0..1.0).contains(&b);
        if !beta_ok(self.beta1) || !beta_ok(self.beta2) {
            return Err(Error::BadConfig(format!(
                "adam betas ({}, {}) must lie in [0, 1)",
                self.beta1, self.beta2
            )));
        }
        if !(self.lr >= 0.0 && self.eps > 0.0) {
            return Err(Error::BadConfig("adam needs lr ≥ 0 and eps > 0".into()));
        }
        Ok(())
    }
}

/// Adam with bias correction. Moments are keyed by parameter name.
#[derive(Debug, Clone)]
pub struct Adam<T: Scalar = f32> {
    pub config: AdamConfig,
    pub t: u64,
    pub m: BTreeMap<String, Tensor<T>>,
    pub v: BTreeMap<String, Tensor<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(config: AdamConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            t: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        })
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.config.lr = lr;
    }

    /// One update of every parameter from its accumulated `grad`:
    ///
    /// ```text
    /// m ← β₁m + (1−β₁)g        v ← β₂v + (1−β₂)g²
    /// m̂ = m / (1−β₁ᵗ)          v̂ = v / (1−β₂ᵗ)
    /// θ ← θ − lr · m̂ / (√v̂ + ε)
    /// ```
    pub fn step<'a>(&mut self, params: impl IntoIterator<Item = &'a mut Parameter<T>>) {
        self.t += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let t = self.t as i32;
        let (b1, b2) = (T::of_f64(beta1), T::of_f64(beta2));
        let (c1, c2) = (T::of_f64(1.0 - beta1.powi(t)), T::of_f64(1.0 - beta2.powi(t)));
        let (lr, eps) = (T::of_f64(lr), T::of_f64(eps));
        for p in params {
            let shape = p.value.shape().to_vec();
            let m = self
                .m
                .entry(p.name.clone())
                .or_insert_with(|| Tensor::zeros(&shape))
                .data_mut();
            let v = self
                .v
                .entry(p.name.clone())
                .or_insert_with(|| Tensor::zeros(&shape))
                .data_mut();
            let theta = p.value.data_mut();
            for (((th, &g), mi), vi) in theta.iter_mut().zip(p.grad.data()).zip(m).zip(v) {
                *mi = b1 * *mi + (T::one() - b1) * g;
                *vi = b2 * *vi + (T::one() - b2) * g * g;
                let m_hat = *mi / c1;
                let v_hat = *vi / c2;
                *th -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
}
