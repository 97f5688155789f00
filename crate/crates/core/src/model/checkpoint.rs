//! Binary checkpoint format. All integers are little-endian.
//!
//! ```text
//! "BCDN"  u32 version  u32 header_len  header_json[header_len]
//! repeat { u16 name_len  name  u8 rank  u32 dims[rank]  f32 data[prod(dims)] }
//! u32 crc32(all preceding bytes)
//! ```
//!
//! The header holds the model config, the seed, and optional optimizer and
//! preprocessing settings. Records are parameters, then buffers, then Adam
//! moments (`adam.m.<param>`, `adam.v.<param>`), each in model order.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Model, ModelConfig};
use crate::error::{Error, Result};
use crate::optim::{Adam, AdamConfig};
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"BCDN";
pub const CHECKPOINT_VERSION: u32 = 1;

const FIXED_PREFIX: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerSnapshot {
    pub config: AdamConfig,
    pub t: u64,
}

/// Per-channel normalization the model was trained with.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Preprocess {
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    seed: u64,
    #[serde(default)]
    optimizer: Option<OptimizerSnapshot>,
    #[serde(default)]
    preprocess: Option<Preprocess>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub seed: u64,
    pub optimizer: Option<OptimizerSnapshot>,
    pub preprocess: Option<Preprocess>,
    /// Named tensors in file order.
    pub tensors: Vec<(String, Tensor<f32>)>,
}

impl Checkpoint {
    pub fn capture(model: &Model<f32>, optimizer: Option<&Adam<f32>>, preprocess: Option<Preprocess>) -> Self {
        let mut tensors: Vec<(String, Tensor<f32>)> = model
            .parameters()
            .into_iter()
            .map(|p| (p.name.clone(), p.value.clone()))
            .collect();
        tensors.extend(model.buffers().into_iter().map(|(n, t)| (n, t.clone())));
        if let Some(opt) = optimizer {
            for (prefix, moments) in [("adam.m", &opt.m), ("adam.v", &opt.v)] {
                for p in model.parameters() {
                    if let Some(t) = moments.get(&p.name) {
                        tensors.push((format!("{prefix}.{}", p.name), t.clone()));
                    }
                }
            }
        }
        Self {
            config: model.config.clone(),
            seed: model.seed,
            optimizer: optimizer.map(|o| OptimizerSnapshot {
                config: o.config,
                t: o.t,
            }),
            preprocess,
            tensors,
        }
    }

    pub fn tensor(&self, name: &str) -> Option<&Tensor<f32>> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_vec(&Header {
            config: self.config.clone(),
            seed: self.seed,
            optimizer: self.optimizer,
            preprocess: self.preprocess,
        })?;
        let mut out = Vec::with_capacity(
            FIXED_PREFIX + header.len() + self.tensors.iter().map(|(_, t)| 4 * t.numel() + 64).sum::<usize>(),
        );
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&len_u32(header.len(), "header")?.to_le_bytes());
        out.extend_from_slice(&header);
        for (name, t) in &self.tensors {
            let name_len =
                u16::try_from(name.len()).map_err(|_| Error::BadConfig(format!("tensor name too long: {name}")))?;
            let rank =
                u8::try_from(t.rank()).map_err(|_| Error::BadConfig(format!("tensor {name} has rank {}", t.rank())))?;
            out.extend_from_slice(&name_len.to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(rank);
            for &d in t.shape() {
                out.extend_from_slice(&len_u32(d, name)?.to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 {
            return Err(Error::TruncatedFile);
        }
        if &bytes[..4] != CHECKPOINT_MAGIC {
            return Err(Error::BadMagic);
        }
        if bytes.len() < FIXED_PREFIX + 4 {
            return Err(Error::TruncatedFile);
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
        if version != CHECKPOINT_VERSION {
            return Err(Error::VersionMismatch {
                found: version,
                expected: CHECKPOINT_VERSION,
            });
        }
        let header_len = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
        let body_end = bytes.len() - 4;
        if FIXED_PREFIX + header_len > body_end {
            return Err(Error::TruncatedFile);
        }
        let stored = u32::from_le_bytes(bytes[body_end..].try_into().expect("4 bytes"));
        let computed = crc32fast::hash(&bytes[..body_end]);
        if stored != computed {
            return Err(Error::ChecksumMismatch { stored, computed });
        }
        let header: Header = serde_json::from_slice(&bytes[FIXED_PREFIX..FIXED_PREFIX + header_len])?;

        let mut r = Reader {
            buf: &bytes[..body_end],
            pos: FIXED_PREFIX + header_len,
        };
        let mut tensors = Vec::new();
        while r.pos < r.buf.len() {
            let name_len = u16::from_le_bytes(r.take::<2>()?) as usize;
            let name = String::from_utf8(r.slice(name_len)?.to_vec())
                .map_err(|_| Error::ConfigMismatch("tensor name is not UTF-8".into()))?;
            let rank = r.take::<1>()?[0] as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(u32::from_le_bytes(r.take::<4>()?) as usize);
            }
            let numel = shape
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .ok_or(Error::TruncatedFile)?;
            let raw = r.slice(numel.checked_mul(4).ok_or(Error::TruncatedFile)?)?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            tensors.push((name, Tensor::new(&shape, data)?));
        }
        Ok(Self {
            config: header.config,
            seed: header.seed,
            optimizer: header.optimizer,
            preprocess: header.preprocess,
            tensors,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    /// Rebuild the model and overwrite every parameter and buffer from the
    /// stored tensors. Names and shapes must match the config exactly.
    pub fn to_model(&self) -> Result<Model<f32>> {
        let mut model = Model::<f32>::build(&self.config, self.seed)?;
        let stored: BTreeMap<&str, &Tensor<f32>> = self.tensors.iter().map(|(n, t)| (n.as_str(), t)).collect();
        let fill = |name: &str, dst: &mut Tensor<f32>| -> Result<()> {
            let src = stored
                .get(name)
                .ok_or_else(|| Error::ConfigMismatch(format!("checkpoint lacks tensor {name}")))?;
            if src.shape() != dst.shape() {
                return Err(Error::ConfigMismatch(format!(
                    "{name}: stored shape {:?}, model expects {:?}",
                    src.shape(),
                    dst.shape()
                )));
            }
            *dst = (*src).clone();
            Ok(())
        };
        let mut expected = 0;
        for p in model.parameters_mut() {
            fill(&p.name, &mut p.value)?;
            expected += 1;
        }
        for (name, t) in model.buffers_mut() {
            fill(&name, t)?;
            expected += 1;
        }
        let moments = self.tensors.iter().filter(|(n, _)| n.starts_with("adam.")).count();
        if self.tensors.len() != expected + moments {
            return Err(Error::ConfigMismatch(format!(
                "checkpoint holds {} model tensors, config defines {expected}",
                self.tensors.len() - moments
            )));
        }
        Ok(model)
    }

    /// Optimizer state, when one was captured.
    pub fn to_optimizer(&self) -> Result<Option<Adam<f32>>> {
        let Some(snap) = self.optimizer else {
            return Ok(None);
        };
        let mut adam = Adam::new(snap.config)?;
        adam.t = snap.t;
        for (name, t) in &self.tensors {
            if let Some(p) = name.strip_prefix("adam.m.") {
                adam.m.insert(p.to_string(), t.clone());
            } else if let Some(p) = name.strip_prefix("adam.v.") {
                adam.v.insert(p.to_string(), t.clone());
            }
        }
        Ok(Some(adam))
    }
}

impl Model<f32> {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        Checkpoint::capture(self, None, None).save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Checkpoint::load(path)?.to_model()
    }
}

fn len_u32(n: usize, what: &str) -> Result<u32> {
    u32::try_from(n).map_err(|_| Error::BadConfig(format!("{what}: length {n} exceeds u32")))
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn slice(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).ok_or(Error::TruncatedFile)?;
        let s = self.buf.get(self.pos..end).ok_or(Error::TruncatedFile)?;
        self.pos = end;
        Ok(s)
    }

    fn take<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.slice(N)?.try_into().expect("length checked"))
    }
}
