use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::augment::{augment, preprocess, AugmentPolicy};
use super::image::decode_png;
use super::manifest::{DatasetManifest, Record, Split};
use crate::error::{Error, Result};
use crate::tensor::{exec_mode, ExecMode, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    /// `[N, 3, H, W]`, normalized.
    pub images: Tensor<f32>,
    pub labels: Vec<usize>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Partition `0..n` into batches of `batch_size`, keeping the short tail.
/// With `shuffle = Some((seed, epoch))` the order is a seeded permutation
/// that differs per epoch.
pub fn batch_plan(n: usize, batch_size: usize, shuffle: Option<(u64, u64)>) -> Vec<Vec<usize>> {
    assert!(batch_size >= 1, "batch_size must be ≥ 1");
    let mut order: Vec<usize> = (0..n).collect();
    if let Some((seed, epoch)) = shuffle {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(epoch);
        order.shuffle(&mut rng);
    }
    order.chunks(batch_size).map(<[usize]>::to_vec).collect()
}

/// Generator for one sample's augmentation, a pure function of
/// `(seed, epoch, record)`.
fn sample_rng(seed: u64, epoch: u64, record: usize) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&epoch.to_le_bytes());
    key[16..24].copy_from_slice(&(record as u64).to_le_bytes());
    key[24..].copy_from_slice(b"augment\0");
    ChaCha8Rng::from_seed(key)
}

/// Loads one split of a manifest as batches.
///
/// Training splits are shuffled per epoch and augmented; other splits are
/// read in manifest order through the evaluation path. Decoded images are
/// cached up to `cache_limit_bytes`. In [`ExecMode::Fast`] samples are
/// decoded and transformed in parallel; the output is identical either way.
#[derive(Debug)]
pub struct Loader {
    records: Vec<Record>,
    manifest_root: std::path::PathBuf,
    split: Split,
    policy: AugmentPolicy,
    augment: bool,
    cache: HashMap<usize, Tensor<f32>>,
    cache_bytes: usize,
    pub cache_limit_bytes: usize,
}

impl Loader {
    pub fn new(manifest: &DatasetManifest, split: Split, policy: AugmentPolicy) -> Result<Self> {
        policy.validate()?;
        let records: Vec<Record> = manifest.split(split).into_iter().cloned().collect();
        if records.is_empty() {
            return Err(Error::EmptySplit(split.to_string()));
        }
        Ok(Self {
            records,
            manifest_root: manifest.root.clone(),
            split,
            policy,
            augment: split == Split::Train,
            cache: HashMap::new(),
            cache_bytes: 0,
            cache_limit_bytes: 1 << 30,
        })
    }

    /// Use the evaluation path even for the training split.
    pub fn without_augmentation(mut self) -> Self {
        self.augment = false;
        self
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[Record] {
        &self.records
    }

    pub fn split(&self) -> Split {
        self.split
    }

    /// Index batches for `epoch`.
    pub fn plan(&self, batch_size: usize, seed: u64, epoch: u64) -> Vec<Vec<usize>> {
        let shuffle = self.augment.then_some((seed, epoch));
        batch_plan(self.records.len(), batch_size, shuffle)
    }

    fn decoded(&mut self, indices: &[usize]) -> Result<Vec<Tensor<f32>>> {
        let missing: Vec<usize> = indices
            .iter()
            .copied()
            .filter(|i| !self.cache.contains_key(i))
            .collect();
        let root = &self.manifest_root;
        let records = &self.records;
        let path = |i: usize| root.join(records[i].path.split('/').collect::<std::path::PathBuf>());
        let fresh: Vec<(usize, Tensor<f32>)> = if exec_mode() == ExecMode::Fast {
            missing
                .par_iter()
                .map(|&i| Ok((i, decode_png(path(i))?)))
                .collect::<Result<_>>()?
        } else {
            missing
                .iter()
                .map(|&i| Ok((i, decode_png(path(i))?)))
                .collect::<Result<_>>()?
        };
        let mut out: HashMap<usize, Tensor<f32>> = HashMap::new();
        for (i, t) in fresh {
            let bytes = 4 * t.numel();
            if self.cache_bytes + bytes <= self.cache_limit_bytes {
                self.cache_bytes += bytes;
                self.cache.insert(i, t.clone());
            }
            out.insert(i, t);
        }
        Ok(indices
            .iter()
            .map(|i| out.get(i).or_else(|| self.cache.get(i)).expect("decoded").clone())
            .collect())
    }

    /// Decode, transform and stack the given records.
    pub fn load(&mut self, indices: &[usize], seed: u64, epoch: u64) -> Result<Batch> {
        if indices.is_empty() {
            return Err(Error::EmptyBatch);
        }
        let images = self.decoded(indices)?;
        let policy = self.policy;
        let augmenting = self.augment;
        let transform = |(&i, img): (&usize, &Tensor<f32>)| {
            if augmenting {
                augment(img, &policy, &mut sample_rng(seed, epoch, i))
            } else {
                preprocess(img, &policy)
            }
        };
        let processed: Vec<Tensor<f32>> = if exec_mode() == ExecMode::Fast {
            indices.par_iter().zip(images.par_iter()).map(transform).collect()
        } else {
            indices.iter().zip(images.iter()).map(transform).collect()
        };
        let hw = policy.target_hw;
        let mut data = Vec::with_capacity(indices.len() * 3 * hw * hw);
        for t in &processed {
            data.extend_from_slice(t.data());
        }
        Ok(Batch {
            images: Tensor::new(&[indices.len(), 3, hw, hw], data)?,
            labels: indices.iter().map(|&i| self.records[i].class).collect(),
        })
    }

    /// Every batch of one epoch, in order.
    pub fn epoch(&mut self, batch_size: usize, seed: u64, epoch: u64) -> Result<Vec<Batch>> {
        self.plan(batch_size, seed, epoch)
            .iter()
            .map(|b| self.load(b, seed, epoch))
            .collect()
    }
}

/// Per-channel mean and population standard deviation of the resized,
/// unnormalized images in `split`.
pub fn channel_stats(manifest: &DatasetManifest, split: Split, target_hw: usize) -> Result<([f64; 3], [f64; 3])> {
    let mut loader = Loader::new(manifest, split, AugmentPolicy::identity(target_hw))?.without_augmentation();
    loader.cache_limit_bytes = 0;
    let mut sum = [0f64; 3];
    let mut sq = [0f64; 3];
    let mut count = 0usize;
    for b in loader.plan(64, 0, 0) {
        let batch = loader.load(&b, 0, 0)?;
        let plane = target_hw * target_hw;
        for img in batch.images.data().chunks(3 * plane) {
            for c in 0..3 {
                for &v in &img[c * plane..(c + 1) * plane] {
                    let v = f64::from(v);
                    sum[c] += v;
                    sq[c] += v * v;
                }
            }
            count += plane;
        }
    }
    let n = count as f64;
    let mean = sum.map(|s| s / n);
    let mut std = [0f64; 3];
    for c in 0..3 {
        std[c] = (sq[c] / n - mean[c] * mean[c]).max(0.0).sqrt().max(1e-6);
    }
    Ok((mean, std))
}
