use std::path::Path;
use std::time::Instant;

use anyhow::Result;
use bcdnet_core::autograd::Tape;
use bcdnet_core::data::{build_manifest, Loader, Split};
use bcdnet_core::model::Model;
use bcdnet_core::nn::Mode;
use bcdnet_core::optim::{cross_entropy, Adam};
use bcdnet_core::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::TrainConfig;
use crate::metrics::peak_rss_bytes;

pub const WARMUP_BATCHES: usize = 10;
pub const TIMED_BATCHES: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchReport {
    pub forward_imgs_per_s: f64,
    pub train_step_imgs_per_s: f64,
    pub peak_rss_bytes: u64,
    pub param_count: usize,
    pub batch_size: usize,
    pub timed_batches: usize,
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

fn time_batches(mut f: impl FnMut() -> Result<()>) -> Result<Vec<f64>> {
    for _ in 0..WARMUP_BATCHES {
        f()?;
    }
    (0..TIMED_BATCHES)
        .map(|_| {
            let t = Instant::now();
            f()?;
            Ok(t.elapsed().as_secs_f64())
        })
        .collect()
}

/// Median throughput of eval-mode forward passes and full train steps on
/// one fixed batch. The batch comes from the train split of `data_root` when
/// given, otherwise from uniform noise.
pub fn bench(cfg: &TrainConfig, data_root: Option<&Path>) -> Result<BenchReport> {
    cfg.validate()?;
    let hw = cfg.model.input_hw;
    let bs = cfg.batch_size;
    let (images, labels) = match data_root {
        Some(root) => {
            let manifest = build_manifest(root, cfg.seed)?;
            let mut loader = Loader::new(&manifest, Split::Train, cfg.augment)?.without_augmentation();
            let idx: Vec<usize> = (0..bs).map(|i| i % loader.len()).collect();
            let b = loader.load(&idx, cfg.seed, 0)?;
            let labels = b.labels.iter().map(|&l| l % cfg.model.num_classes).collect();
            (b.images, labels)
        }
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            let x = Tensor::<f32>::rand_uniform(&[bs, cfg.model.in_channels, hw, hw], -1.0, 1.0, &mut rng);
            (x, (0..bs).map(|i| i % cfg.model.num_classes).collect::<Vec<_>>())
        }
    };

    let mut model = Model::<f32>::build(&cfg.model, cfg.seed)?;
    let forward = time_batches(|| {
        model.predict(&images)?;
        Ok(())
    })?;
    let mut adam = Adam::new(cfg.optimizer)?;
    let train = time_batches(|| {
        model.zero_grad();
        let mut tape = Tape::new();
        let x = tape.constant(images.clone());
        let y = model.forward(&mut tape, x, Mode::Train)?;
        let loss = cross_entropy(&mut tape, y, &labels)?;
        model.backward(&tape, loss)?;
        adam.step(model.parameters_mut());
        Ok(())
    })?;
    Ok(BenchReport {
        forward_imgs_per_s: bs as f64 / median(forward),
        train_step_imgs_per_s: bs as f64 / median(train),
        peak_rss_bytes: peak_rss_bytes(),
        param_count: model.param_count(),
        batch_size: bs,
        timed_batches: TIMED_BATCHES,
    })
}
