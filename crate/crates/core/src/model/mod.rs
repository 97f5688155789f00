//! The BCDNet reference architecture and its lifecycle.
//!
//! A model is a stack of conv blocks followed by a two-layer classifier:
//!
//! ```text
//! repeat per block: conv(k×k, stride, pad) → batchnorm → relu → maxpool
//! flatten → linear(→fc_hidden) → relu → dropout → linear(→num_classes)
//! ```
//!
//! The logits carry no activation; softmax lives in the loss.

mod checkpoint;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Parameter, Tape, Var};
use crate::error::{Error, Result};
use crate::nn::{
    conv_output_extent, pool_output_extent, AnyLayer, BatchNorm2d, Conv2d, Dropout, Flatten, Layer, Linear, MaxPool2d,
    Mode, Relu,
};
use crate::tensor::{Scalar, Tensor};

pub use checkpoint::{Checkpoint, OptimizerSnapshot, Preprocess, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub in_channels: usize,
    pub input_hw: usize,
    pub block_channels: Vec<usize>,
    pub kernel: usize,
    pub conv_stride: usize,
    pub conv_pad: usize,
    pub pool_window: usize,
    pub pool_stride: usize,
    pub fc_hidden: usize,
    pub dropout_rate: f64,
    pub num_classes: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            in_channels: 3,
            input_hw: 224,
            block_channels: vec![32, 64, 128, 256, 256],
            kernel: 3,
            conv_stride: 1,
            conv_pad: 1,
            pool_window: 2,
            pool_stride: 2,
            fc_hidden: 512,
            dropout_rate: 0.5,
            num_classes: 2,
        }
    }
}

impl ModelConfig {
    /// Two narrow blocks on 64×64 input; trains in seconds on a CPU.
    pub fn micro() -> Self {
        Self {
            input_hw: 64,
            block_channels: vec![8, 16],
            fc_hidden: 32,
            ..Self::default()
        }
    }

    /// Spatial extent after each block, or `BadConfig` when some block does
    /// not divide evenly.
    pub fn block_extents(&self) -> Result<Vec<usize>> {
        let bad = |msg: String| Error::BadConfig(msg);
        if self.block_channels.is_empty() {
            return Err(bad("at least one conv block is required".into()));
        }
        if self.num_classes < 2 {
            return Err(bad(format!("num_classes must be ≥ 2, got {}", self.num_classes)));
        }
        if self.in_channels == 0 || self.fc_hidden == 0 || self.block_channels.contains(&0) {
            return Err(bad("channel and hidden widths must be ≥ 1".into()));
        }
        if self.kernel == 0 || self.conv_stride == 0 || self.pool_window == 0 || self.pool_stride == 0 {
            return Err(bad("kernel, window and strides must be ≥ 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(bad(format!("dropout_rate {} not in [0, 1)", self.dropout_rate)));
        }
        let mut hw = self.input_hw;
        let mut extents = Vec::with_capacity(self.block_channels.len());
        for (i, _) in self.block_channels.iter().enumerate() {
            let padded = hw + 2 * self.conv_pad;
            if padded < self.kernel || !(padded - self.kernel).is_multiple_of(self.conv_stride) {
                return Err(bad(format!("block {i}: conv does not tile extent {hw}")));
            }
            let conv = conv_output_extent(hw, self.kernel, self.conv_stride, self.conv_pad)?;
            if conv < self.pool_window || !(conv - self.pool_window).is_multiple_of(self.pool_stride) {
                return Err(bad(format!(
                    "block {i}: extent {conv} is not divisible by the pooling grid \
                     (input_hw {} over {} blocks)",
                    self.input_hw,
                    self.block_channels.len()
                )));
            }
            hw = pool_output_extent(conv, self.pool_window, self.pool_stride)?;
            extents.push(hw);
        }
        Ok(extents)
    }

    pub fn validate(&self) -> Result<()> {
        self.block_extents().map(|_| ())
    }

    /// Width of the flattened feature vector entering the classifier.
    pub fn flatten_extent(&self) -> Result<usize> {
        let hw = *self.block_extents()?.last().expect("non-empty");
        Ok(self.block_channels.last().expect("non-empty") * hw * hw)
    }

    /// Closed-form number of trainable scalars.
    pub fn param_count(&self) -> Result<usize> {
        let flat = self.flatten_extent()?;
        let mut total = 0;
        let mut c_in = self.in_channels;
        for &c in &self.block_channels {
            total += c * c_in * self.kernel * self.kernel + c + 2 * c;
            c_in = c;
        }
        total += self.fc_hidden * flat + self.fc_hidden;
        total += self.num_classes * self.fc_hidden + self.num_classes;
        Ok(total)
    }
}

#[derive(Debug, Clone)]
pub struct Model<T: Scalar = f32> {
    pub config: ModelConfig,
    pub seed: u64,
    layers: Vec<AnyLayer<T>>,
}

impl<T: Scalar> Model<T> {
    /// Build and initialize from `seed`. The same seed gives bit-identical
    /// parameters, and f32/f64 builds agree up to rounding.
    pub fn build(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::new();
        let mut c_in = config.in_channels;
        for (i, &c) in config.block_channels.iter().enumerate() {
            let prefix = format!("block{i}");
            layers.push(AnyLayer::Conv2d(Conv2d::new(
                &format!("{prefix}.conv"),
                c_in,
                c,
                config.kernel,
                config.conv_stride,
                config.conv_pad,
                &mut rng,
            )?));
            layers.push(AnyLayer::BatchNorm2d(BatchNorm2d::new(&format!("{prefix}.bn"), c)));
            layers.push(AnyLayer::Relu(Relu));
            layers.push(AnyLayer::MaxPool2d(MaxPool2d::new(
                config.pool_window,
                config.pool_stride,
            )?));
            c_in = c;
        }
        let flat = config.flatten_extent()?;
        layers.push(AnyLayer::Flatten(Flatten));
        layers.push(AnyLayer::Linear(Linear::new("fc1", flat, config.fc_hidden, &mut rng)?));
        layers.push(AnyLayer::Relu(Relu));
        layers.push(AnyLayer::Dropout(Dropout::new(
            config.dropout_rate,
            seed ^ 0xd809_0075,
        )?));
        layers.push(AnyLayer::Linear(Linear::new(
            "fc2",
            config.fc_hidden,
            config.num_classes,
            &mut rng,
        )?));
        Ok(Self {
            config: config.clone(),
            seed,
            layers,
        })
    }

    pub fn layers(&self) -> &[AnyLayer<T>] {
        &self.layers
    }

    pub fn set_mode(&mut self, mode: Mode) {
        for l in &mut self.layers {
            l.set_mode(mode);
        }
    }

    fn check_input(&self, shape: &[usize]) -> Result<()> {
        let c = &self.config;
        match *shape {
            [n, ch, h, w] if n >= 1 && ch == c.in_channels && h == c.input_hw && w == c.input_hw => Ok(()),
            _ => Err(Error::shape(format!(
                "model expects [N,{},{},{}], got {shape:?}",
                c.in_channels, c.input_hw, c.input_hw
            ))),
        }
    }

    /// Record a forward pass in `mode`, returning the logits `[N, num_classes]`.
    pub fn forward(&mut self, tape: &mut Tape<T>, x: Var, mode: Mode) -> Result<Var> {
        self.check_input(tape.value(x).shape())?;
        self.set_mode(mode);
        let mut h = x;
        for l in &mut self.layers {
            h = l.forward(tape, h)?;
        }
        Ok(h)
    }

    /// Eval-mode logits without recording anything for backward. Does not
    /// touch parameters or buffers.
    pub fn predict(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_input(x.shape())?;
        let mut layers = self.layers.clone();
        let mut tape = Tape::no_grad();
        let mut h = tape.constant(x.clone());
        for l in &mut layers {
            l.set_mode(Mode::Eval);
            h = l.forward(&mut tape, h)?;
        }
        Ok(tape.value(h).clone())
    }

    /// Output shape after every layer for a batch of `n` images.
    pub fn shape_trace(&self, n: usize) -> Result<Vec<(&'static str, Vec<usize>)>> {
        let mut layers = self.layers.clone();
        let mut tape = Tape::no_grad();
        let hw = self.config.input_hw;
        let mut h = tape.constant(Tensor::zeros(&[n, self.config.in_channels, hw, hw]));
        let mut trace = Vec::with_capacity(layers.len());
        for l in &mut layers {
            l.set_mode(Mode::Eval);
            h = l.forward(&mut tape, h)?;
            trace.push((l.kind(), tape.value(h).shape().to_vec()));
        }
        Ok(trace)
    }

    pub fn parameters(&self) -> Vec<&Parameter<T>> {
        self.layers.iter().flat_map(|l| l.parameters()).collect()
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Parameter<T>> {
        self.layers.iter_mut().flat_map(|l| l.parameters_mut()).collect()
    }

    pub fn buffers(&self) -> Vec<(String, &Tensor<T>)> {
        self.layers.iter().flat_map(|l| l.buffers()).collect()
    }

    pub fn buffers_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        self.layers.iter_mut().flat_map(|l| l.buffers_mut()).collect()
    }

    pub fn param_count(&self) -> usize {
        self.parameters().iter().map(|p| p.numel()).sum()
    }

    pub fn zero_grad(&mut self) {
        crate::autograd::zero_grad(self.parameters_mut());
    }

    /// Backward from `loss`, accumulating into every parameter's gradient.
    pub fn backward(&mut self, tape: &Tape<T>, loss: Var) -> Result<()> {
        let grads = tape.backward(loss)?;
        grads.accumulate(self.parameters_mut());
        Ok(())
    }

    /// Human-readable layer table ending in `total_params: N`.
    pub fn describe(&self) -> Result<String> {
        use std::fmt::Write;
        let trace = self.shape_trace(1)?;
        let mut s = String::new();
        let _ = writeln!(s, "{:<4} {:<12} {:<22} {:>10}", "#", "layer", "output", "params");
        for (i, (l, (kind, shape))) in self.layers.iter().zip(&trace).enumerate() {
            let n: usize = l.parameters().iter().map(|p| p.numel()).sum();
            let shape = format!("{:?}", &shape[1..]);
            let _ = writeln!(s, "{i:<4} {kind:<12} {shape:<22} {n:>10}");
        }
        let _ = writeln!(s, "total_params: {}", self.param_count());
        Ok(s)
    }
}

impl<T: Scalar> Layer<T> for Model<T> {
    fn kind(&self) -> &'static str {
        "model"
    }

    /// Runs in whatever mode the layers are currently in.
    fn forward(&mut self, tape: &mut Tape<T>, x: Var) -> Result<Var> {
        self.check_input(tape.value(x).shape())?;
        let mut h = x;
        for l in &mut self.layers {
            h = l.forward(tape, h)?;
        }
        Ok(h)
    }

    fn parameters(&self) -> Vec<&Parameter<T>> {
        Model::parameters(self)
    }

    fn parameters_mut(&mut self) -> Vec<&mut Parameter<T>> {
        Model::parameters_mut(self)
    }

    fn buffers(&self) -> Vec<(String, &Tensor<T>)> {
        Model::buffers(self)
    }

    fn buffers_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        Model::buffers_mut(self)
    }

    fn set_mode(&mut self, mode: Mode) {
        Model::set_mode(self, mode)
    }
}
