use std::path::Path;

use anyhow::{bail, Context, Result};
use bcdnet_core::data::{build_manifest, AugmentPolicy, Loader, Split};
use bcdnet_core::model::Checkpoint;
use serde::Serialize;

use crate::train::evaluate;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub split: String,
    pub records: usize,
    pub loss: f64,
    pub accuracy: f64,
}

/// Evaluate a checkpoint on one split of `data_root`. The split assignment
/// is rebuilt from the seed stored in the checkpoint, so it matches the
/// training run.
pub fn eval(checkpoint: &Path, data_root: &Path, split: Split, batch_size: usize) -> Result<EvalReport> {
    let ckpt = Checkpoint::load(checkpoint).with_context(|| format!("loading checkpoint {}", checkpoint.display()))?;
    let model = ckpt.to_model()?;
    let manifest =
        build_manifest(data_root, ckpt.seed).with_context(|| format!("reading data root {}", data_root.display()))?;
    if manifest.num_classes() != model.config.num_classes {
        bail!(
            "data root has {} classes, checkpoint expects {}",
            manifest.num_classes(),
            model.config.num_classes
        );
    }
    let defaults = AugmentPolicy::default();
    let pre = ckpt.preprocess;
    let policy = AugmentPolicy {
        mean: pre.map_or(defaults.mean, |p| p.mean),
        std: pre.map_or(defaults.std, |p| p.std),
        target_hw: model.config.input_hw,
        ..AugmentPolicy::identity(model.config.input_hw)
    };
    let mut loader = Loader::new(&manifest, split, policy)?.without_augmentation();
    let (loss, accuracy) = evaluate(&model, &mut loader, batch_size.max(1))?;
    Ok(EvalReport {
        split: split.to_string(),
        records: loader.len(),
        loss,
        accuracy,
    })
}
