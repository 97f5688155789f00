use super::Layer;
use crate::autograd::{Tape, Var};
use crate::error::Result;
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Relu;

pub fn relu_forward<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Subgradient 0 at `x == 0`.
pub fn relu_backward<T: Scalar>(x: &Tensor<T>, grad_out: &Tensor<T>) -> Tensor<T> {
    x.zip(grad_out, |v, g| if v > T::zero() { g } else { T::zero() })
        .expect("relu grad has input shape")
}

impl<T: Scalar> Layer<T> for Relu {
    fn kind(&self) -> &'static str {
        "relu"
    }

    fn forward(&mut self, tape: &mut Tape<T>, x: Var) -> Result<Var> {
        let xv = tape.value(x).clone();
        let out = relu_forward(&xv);
        tape.record(
            "relu",
            &[x],
            out,
            Box::new(move |g, _| vec![Some(relu_backward(&xv, g))]),
        )
    }
}
