//! Layers with analytic forward and backward passes.
//!
//! Each layer exposes a tape-free functional kernel (`conv2d_forward`,
//! `maxpool2d_forward`, ...) and a [`Layer`] implementation that records the
//! kernel's output on a [`Tape`] together with its backward rule.

mod activation;
mod batchnorm;
mod conv;
mod dropout;
mod flatten;
mod linear;
mod pool;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Parameter, Tape, Var};
use crate::error::Result;
use crate::tensor::{Scalar, Tensor};

pub use activation::{relu_backward, relu_forward, Relu};
pub use batchnorm::{BatchNorm2d, BN_EPS, BN_MOMENTUM};
pub use conv::{conv2d_backward, conv2d_forward, conv_output_extent, Conv2d, Conv2dGrads};
pub use dropout::{dropout_mask, Dropout};
pub use flatten::Flatten;
pub use linear::{linear_backward, linear_forward, Linear, LinearGrads};
pub use pool::{maxpool2d_backward, maxpool2d_forward, pool_output_extent, MaxPool2d};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    #[default]
    Train,
    Eval,
}

pub trait Layer<T: Scalar> {
    fn kind(&self) -> &'static str;

    fn forward(&mut self, tape: &mut Tape<T>, x: Var) -> Result<Var>;

    fn parameters(&self) -> Vec<&Parameter<T>> {
        Vec::new()
    }

    fn parameters_mut(&mut self) -> Vec<&mut Parameter<T>> {
        Vec::new()
    }

    /// Non-trainable state saved with the model, by name.
    fn buffers(&self) -> Vec<(String, &Tensor<T>)> {
        Vec::new()
    }

    fn buffers_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        Vec::new()
    }

    fn set_mode(&mut self, _mode: Mode) {}
}

/// He-style init: uniform on `±sqrt(6 / fan_in)`, i.e. variance `2 / fan_in`.
pub(crate) fn he_uniform<T: Scalar, R: Rng + ?Sized>(shape: &[usize], fan_in: usize, rng: &mut R) -> Tensor<T> {
    let bound = (6.0 / fan_in.max(1) as f64).sqrt();
    Tensor::rand_uniform(shape, -bound, bound, rng)
}

/// Closed set of layer types a [`crate::model::Model`] is assembled from.
#[derive(Debug, Clone)]
pub enum AnyLayer<T: Scalar> {
    Conv2d(Conv2d<T>),
    BatchNorm2d(BatchNorm2d<T>),
    Relu(Relu),
    MaxPool2d(MaxPool2d),
    Flatten(Flatten),
    Linear(Linear<T>),
    Dropout(Dropout),
}

macro_rules! dispatch {
    ($self:expr, $l:ident => $e:expr) => {
        match $self {
            AnyLayer::Conv2d($l) => $e,
            AnyLayer::BatchNorm2d($l) => $e,
            AnyLayer::Relu($l) => $e,
            AnyLayer::MaxPool2d($l) => $e,
            AnyLayer::Flatten($l) => $e,
            AnyLayer::Linear($l) => $e,
            AnyLayer::Dropout($l) => $e,
        }
    };
}

impl<T: Scalar> Layer<T> for AnyLayer<T> {
    fn kind(&self) -> &'static str {
        dispatch!(self, l => Layer::<T>::kind(l))
    }

    fn forward(&mut self, tape: &mut Tape<T>, x: Var) -> Result<Var> {
        dispatch!(self, l => l.forward(tape, x))
    }

    fn parameters(&self) -> Vec<&Parameter<T>> {
        dispatch!(self, l => l.parameters())
    }

    fn parameters_mut(&mut self) -> Vec<&mut Parameter<T>> {
        dispatch!(self, l => l.parameters_mut())
    }

    fn buffers(&self) -> Vec<(String, &Tensor<T>)> {
        dispatch!(self, l => l.buffers())
    }

    fn buffers_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        dispatch!(self, l => l.buffers_mut())
    }

    fn set_mode(&mut self, mode: Mode) {
        dispatch!(self, l => Layer::<T>::set_mode(l, mode))
    }
}
