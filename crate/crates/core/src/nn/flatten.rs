use super::Layer;
use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Scalar;

/// `[N, C, H, W] → [N, C·H·W]`, metadata only.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Flatten;

impl<T: Scalar> Layer<T> for Flatten {
    fn kind(&self) -> &'static str {
        "flatten"
    }

    fn forward(&mut self, tape: &mut Tape<T>, x: Var) -> Result<Var> {
        let shape = tape.value(x).shape();
        let Some((&n, rest)) = shape.split_first() else {
            return Err(Error::shape("cannot flatten a rank-0 tensor"));
        };
        let features = rest.iter().product();
        tape.reshape(x, &[n, features])
    }
}
