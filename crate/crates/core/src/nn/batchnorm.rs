//! Per-channel batch normalization over `(N, H, W)`.
//!
//! Train mode normalizes with the batch mean and biased variance and folds
//! them into the running statistics (the running variance uses the unbiased
//! estimate). Eval mode normalizes with the running statistics only.

use super::{Layer, Mode};
use crate::autograd::{Parameter, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone)]
pub struct BatchNorm2d<T: Scalar = f32> {
    pub gamma: Parameter<T>,
    pub beta: Parameter<T>,
    pub running_mean: Tensor<T>,
    pub running_var: Tensor<T>,
    pub eps: f64,
    pub momentum: f64,
    pub mode: Mode,
    name: String,
}

impl<T: Scalar> BatchNorm2d<T> {
    pub fn new(name: &str, channels: usize) -> Self {
        Self {
            gamma: Parameter::new(format!("{name}.gamma"), Tensor::ones(&[channels])),
            beta: Parameter::new(format!("{name}.beta"), Tensor::zeros(&[channels])),
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::ones(&[channels]),
            eps: BN_EPS,
            momentum: BN_MOMENTUM,
            mode: Mode::Train,
            name: name.to_string(),
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.numel()
    }
}

/// What the backward rule needs from a forward pass.
struct Saved<T> {
    x_hat: Vec<T>,
    inv_std: Vec<T>,
    gamma: Vec<T>,
    batch_stats: bool,
}

fn channel_slices(shape: &[usize]) -> Result<(usize, usize, usize)> {
    match *shape {
        [n, c, h, w] => Ok((n, c, h * w)),
        _ => Err(Error::shape(format!(
            "batch norm input must be [N,C,H,W], got {shape:?}"
        ))),
    }
}

impl<T: Scalar> BatchNorm2d<T> {
    fn normalize(&mut self, x: &Tensor<T>) -> Result<(Tensor<T>, Saved<T>)> {
        let (n, c, hw) = channel_slices(x.shape())?;
        if c != self.channels() {
            return Err(Error::shape(format!(
                "batch norm has {} channels, input has {c}",
                self.channels()
            )));
        }
        let m = n * hw;
        let train = self.mode == Mode::Train;
        if train && m < 2 {
            return Err(Error::TooFewElements(m));
        }
        let data = x.data();
        let at = |img: usize, ch: usize| &data[(img * c + ch) * hw..(img * c + ch + 1) * hw];

        let eps = T::of_f64(self.eps);
        let mut mean = vec![T::zero(); c];
        let mut inv_std = vec![T::zero(); c];
        for ch in 0..c {
            let (mu, var) = if train {
                let count = T::of_f64(m as f64);
                let mut sum = T::zero();
                for img in 0..n {
                    for &v in at(img, ch) {
                        sum += v;
                    }
                }
                let mu = sum / count;
                let mut sq = T::zero();
                for img in 0..n {
                    for &v in at(img, ch) {
                        sq += (v - mu) * (v - mu);
                    }
                }
                let var = sq / count;
                let mom = T::of_f64(self.momentum);
                let unbiased = sq / T::of_f64((m - 1) as f64);
                let rm = &mut self.running_mean.data_mut()[ch];
                *rm = (T::one() - mom) * *rm + mom * mu;
                let rv = &mut self.running_var.data_mut()[ch];
                *rv = (T::one() - mom) * *rv + mom * unbiased;
                (mu, var)
            } else {
                (self.running_mean.data()[ch], self.running_var.data()[ch])
            };
            mean[ch] = mu;
            inv_std[ch] = T::one() / (var + eps).sqrt();
        }

        let gamma = self.gamma.value.data();
        let beta = self.beta.value.data();
        let mut x_hat = vec![T::zero(); data.len()];
        let mut out = vec![T::zero(); data.len()];
        for img in 0..n {
            for ch in 0..c {
                let off = (img * c + ch) * hw;
                for i in off..off + hw {
                    let xh = (data[i] - mean[ch]) * inv_std[ch];
                    x_hat[i] = xh;
                    out[i] = gamma[ch] * xh + beta[ch];
                }
            }
        }
        let saved = Saved {
            x_hat,
            inv_std,
            gamma: gamma.to_vec(),
            batch_stats: train,
        };
        Ok((Tensor::new(x.shape(), out)?, saved))
    }
}

fn backward<T: Scalar>(shape: &[usize], s: &Saved<T>, g: &Tensor<T>) -> [Tensor<T>; 3] {
    let (n, c, hw) = channel_slices(shape).expect("validated in forward");
    let gd = g.data();
    let mut d_gamma = vec![T::zero(); c];
    let mut d_beta = vec![T::zero(); c];
    for img in 0..n {
        for ch in 0..c {
            let off = (img * c + ch) * hw;
            for (&g, &xh) in gd[off..off + hw].iter().zip(&s.x_hat[off..off + hw]) {
                d_beta[ch] += g;
                d_gamma[ch] += g * xh;
            }
        }
    }
    let m = T::of_f64((n * hw) as f64);
    let mut dx = vec![T::zero(); gd.len()];
    for img in 0..n {
        for ch in 0..c {
            let off = (img * c + ch) * hw;
            let scale = s.gamma[ch] * s.inv_std[ch];
            for i in off..off + hw {
                dx[i] = if s.batch_stats {
                    // μ and σ depend on x.
                    scale / m * (m * gd[i] - d_beta[ch] - s.x_hat[i] * d_gamma[ch])
                } else {
                    scale * gd[i]
                };
            }
        }
    }
    [
        Tensor::new(shape, dx).expect("sized"),
        Tensor::new(&[c], d_gamma).expect("sized"),
        Tensor::new(&[c], d_beta).expect("sized"),
    ]
}

impl<T: Scalar> Layer<T> for BatchNorm2d<T> {
    fn kind(&self) -> &'static str {
        "batchnorm2d"
    }

    fn forward(&mut self, tape: &mut Tape<T>, x: Var) -> Result<Var> {
        let gamma = tape.param(&self.gamma);
        let beta = tape.param(&self.beta);
        let (out, saved) = self.normalize(tape.value(x))?;
        let shape = tape.value(x).shape().to_vec();
        tape.record(
            "batchnorm2d",
            &[x, gamma, beta],
            out,
            Box::new(move |g, _| backward(&shape, &saved, g).map(Some).into()),
        )
    }

    fn parameters(&self) -> Vec<&Parameter<T>> {
        vec![&self.gamma, &self.beta]
    }

    fn parameters_mut(&mut self) -> Vec<&mut Parameter<T>> {
        vec![&mut self.gamma, &mut self.beta]
    }

    fn buffers(&self) -> Vec<(String, &Tensor<T>)> {
        vec![
            (format!("{}.running_mean", self.name), &self.running_mean),
            (format!("{}.running_var", self.name), &self.running_var),
        ]
    }

    fn buffers_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        vec![
            (format!("{}.running_mean", self.name), &mut self.running_mean),
            (format!("{}.running_var", self.name), &mut self.running_var),
        ]
    }

    fn set_mode(&mut self, mode: Mode) {
        self.mode = mode;
    }
}
