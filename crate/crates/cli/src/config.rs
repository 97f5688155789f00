use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use bcdnet_core::data::AugmentPolicy;
use bcdnet_core::model::{ModelConfig, Preprocess};
use bcdnet_core::optim::{AdamConfig, StepLr};
use serde::{Deserialize, Serialize};

pub const SEED_ENV: &str = "BCDNET_SEED";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SchedulerConfig {
    pub step_size: u32,
    pub gamma: f64,
}

impl Default for SchedulerConfig {
    fn default() -> Self {
        let d = StepLr::default();
        Self {
            step_size: d.step_size,
            gamma: d.gamma,
        }
    }
}

/// Everything `train` needs. Every field has a default, so `{}` is a valid
/// config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub augment: AugmentPolicy,
    pub optimizer: AdamConfig,
    pub scheduler: SchedulerConfig,
    pub epochs: u32,
    pub batch_size: usize,
    pub seed: u64,
    pub out_dir: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            augment: AugmentPolicy::default(),
            optimizer: AdamConfig::default(),
            scheduler: SchedulerConfig::default(),
            epochs: 20,
            batch_size: 32,
            seed: 0,
            out_dir: None,
        }
    }
}

impl TrainConfig {
    /// Two small blocks on 64×64 input; the quick configuration used for the
    /// synthetic corpus.
    pub fn micro() -> Self {
        let model = ModelConfig::micro();
        Self {
            augment: AugmentPolicy {
                target_hw: model.input_hw,
                ..AugmentPolicy::default()
            },
            model,
            epochs: 5,
            batch_size: 8,
            ..Self::default()
        }
    }

    /// Read a JSON config; a missing path means all defaults. The
    /// `BCDNET_SEED` environment variable overrides `seed`.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let mut cfg = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                serde_json::from_str(&text).with_context(|| format!("parsing config {}", p.display()))?
            }
            None => Self::default(),
        };
        if let Ok(seed) = std::env::var(SEED_ENV) {
            cfg.seed = seed
                .trim()
                .parse()
                .with_context(|| format!("{SEED_ENV}={seed:?} is not an unsigned integer"))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs < 1 {
            bail!("epochs must be ≥ 1");
        }
        if self.batch_size < 1 {
            bail!("batch_size must be ≥ 1");
        }
        self.model.validate()?;
        self.augment.validate()?;
        self.optimizer.validate()?;
        self.scheduler()?;
        if self.augment.target_hw != self.model.input_hw {
            bail!(
                "augment.target_hw ({}) must equal model.input_hw ({})",
                self.augment.target_hw,
                self.model.input_hw
            );
        }
        Ok(())
    }

    pub fn scheduler(&self) -> Result<StepLr> {
        Ok(StepLr::new(
            self.optimizer.lr,
            self.scheduler.step_size,
            self.scheduler.gamma,
        )?)
    }

    pub fn preprocess(&self) -> Preprocess {
        Preprocess {
            mean: self.augment.mean,
            std: self.augment.std,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}
