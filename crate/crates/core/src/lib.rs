//! Core of the BCDNet training stack: tensors, reverse-mode autodiff, layers,
//! optimizers, the reference model, and the data pipeline.

pub mod autograd;
pub mod data;
pub mod error;
pub mod model;
pub mod nn;
pub mod optim;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{exec_mode, set_exec_mode, ExecMode, Scalar, Tensor};
