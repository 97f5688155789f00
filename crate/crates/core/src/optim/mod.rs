//! Training objective and parameter updates: softmax cross-entropy, Adam,
//! and a step learning-rate schedule.

mod adam;
mod loss;
mod schedule;

pub use adam::{Adam, AdamConfig};
pub use loss::{accuracy, argmax_rows, cross_entropy, softmax_cross_entropy, CrossEntropyLoss};
pub use schedule::{step_lr, StepLr};
