use rand::Rng;

use super::{he_uniform, Layer};
use crate::autograd::{Parameter, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{gemm, gemm_nt, gemm_tn, Scalar, Tensor};

/// Fully connected layer `y = x·Wᵀ + b`. No activation is applied here.
#[derive(Debug, Clone)]
pub struct Linear<T: Scalar = f32> {
    /// `[out, in]`
    pub weight: Parameter<T>,
    /// `[out]`
    pub bias: Parameter<T>,
}

impl<T: Scalar> Linear<T> {
    pub fn new<R: Rng + ?Sized>(name: &str, inputs: usize, outputs: usize, rng: &mut R) -> Result<Self> {
        let weight = he_uniform(&[outputs, inputs], inputs, rng);
        Self::from_parts(name, weight, Tensor::zeros(&[outputs]))
    }

    pub fn from_parts(name: &str, weight: Tensor<T>, bias: Tensor<T>) -> Result<Self> {
        let &[outputs, _] = weight.shape() else {
            return Err(Error::shape(format!(
                "linear weight must be a matrix, got {:?}",
                weight.shape()
            )));
        };
        if bias.shape() != [outputs] {
            return Err(Error::shape(format!(
                "linear bias {:?} for {outputs} outputs",
                bias.shape()
            )));
        }
        Ok(Self {
            weight: Parameter::new(format!("{name}.weight"), weight),
            bias: Parameter::new(format!("{name}.bias"), bias),
        })
    }
}

pub fn linear_forward<T: Scalar>(x: &Tensor<T>, weight: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    let (&[n, inputs], &[outputs, w_in]) = (x.shape(), weight.shape()) else {
        return Err(Error::shape(format!(
            "linear needs [N,in] x [out,in], got {:?} and {:?}",
            x.shape(),
            weight.shape()
        )));
    };
    if inputs != w_in || bias.shape() != [outputs] {
        return Err(Error::shape(format!(
            "linear {w_in}→{outputs} applied to input {:?}",
            x.shape()
        )));
    }
    let mut out: Vec<T> = (0..n).flat_map(|_| bias.data().iter().copied()).collect();
    gemm_nt(n, inputs, outputs, x.data(), weight.data(), &mut out);
    Tensor::new(&[n, outputs], out)
}

pub struct LinearGrads<T> {
    pub input: Option<Tensor<T>>,
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

/// `dW = gᵀ·x`, `db = Σ_rows g`, `dx = g·W`.
pub fn linear_backward<T: Scalar>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    grad_out: &Tensor<T>,
    want_input: bool,
) -> LinearGrads<T> {
    let (n, inputs) = (x.shape()[0], x.shape()[1]);
    let outputs = weight.shape()[0];
    let mut dw = vec![T::zero(); outputs * inputs];
    gemm_tn(outputs, n, inputs, grad_out.data(), x.data(), &mut dw);
    let mut db = vec![T::zero(); outputs];
    for row in grad_out.data().chunks(outputs.max(1)) {
        for (acc, &g) in db.iter_mut().zip(row) {
            *acc += g;
        }
    }
    let input = want_input.then(|| {
        let mut dx = vec![T::zero(); n * inputs];
        gemm(n, outputs, inputs, grad_out.data(), weight.data(), &mut dx);
        Tensor::new(&[n, inputs], dx).expect("sized above")
    });
    LinearGrads {
        input,
        weight: Tensor::new(&[outputs, inputs], dw).expect("sized above"),
        bias: Tensor::new(&[outputs], db).expect("sized above"),
    }
}

impl<T: Scalar> Layer<T> for Linear<T> {
    fn kind(&self) -> &'static str {
        "linear"
    }

    fn forward(&mut self, tape: &mut Tape<T>, x: Var) -> Result<Var> {
        let w = tape.param(&self.weight);
        let b = tape.param(&self.bias);
        let xv = tape.value(x).clone();
        let wv = self.weight.value.clone();
        let out = linear_forward(&xv, &wv, &self.bias.value)?;
        tape.record(
            "linear",
            &[x, w, b],
            out,
            Box::new(move |g, needs| {
                let grads = linear_backward(&xv, &wv, g, needs[0]);
                vec![grads.input, Some(grads.weight), Some(grads.bias)]
            }),
        )
    }

    fn parameters(&self) -> Vec<&Parameter<T>> {
        vec![&self.weight, &self.bias]
    }

    fn parameters_mut(&mut self) -> Vec<&mut Parameter<T>> {
        vec![&mut self.weight, &mut self.bias]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn m(shape: &[usize], d: &[f64]) -> Tensor<f64> {
        Tensor::new(shape, d.to_vec()).unwrap()
    }

    #[test]
    fn identity_weight() {
        let x = m(&[2, 3], &[1.0, -2.0, 3.0, 0.5, 0.0, -1.0]);
        let eye = Tensor::from_fn(&[3, 3], |i| if i % 4 == 0 { 1.0 } else { 0.0 });
        assert_eq!(linear_forward(&x, &eye, &Tensor::zeros(&[3])).unwrap(), x);
    }

    #[test]
    fn hand_arithmetic() {
        let y = linear_forward(
            &m(&[1, 2], &[1.0, 2.0]),
            &m(&[2, 2], &[1.0, 1.0, 0.0, 1.0]),
            &m(&[2], &[1.0, -1.0]),
        )
        .unwrap();
        assert_eq!(y.data(), &[4.0, 1.0]);
    }

    #[test]
    fn matches_triple_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let x = Tensor::<f64>::rand_uniform(&[3, 5], -1.0, 1.0, &mut rng);
        let w = Tensor::<f64>::rand_uniform(&[4, 5], -1.0, 1.0, &mut rng);
        let b = Tensor::<f64>::rand_uniform(&[4], -1.0, 1.0, &mut rng);
        let y = linear_forward(&x, &w, &b).unwrap();
        for n in 0..3 {
            for o in 0..4 {
                let mut acc = b.data()[o];
                for i in 0..5 {
                    acc += x.data()[n * 5 + i] * w.data()[o * 5 + i];
                }
                assert_eq!(y.data()[n * 4 + o], acc);
            }
        }
    }

    #[test]
    fn in_extent_mismatch() {
        let x = Tensor::<f64>::zeros(&[2, 3]);
        let w = Tensor::<f64>::zeros(&[4, 5]);
        assert!(matches!(
            linear_forward(&x, &w, &Tensor::zeros(&[4])),
            Err(Error::ShapeMismatch(_))
        ));
    }

    #[test]
    fn backward_formulas() {
        let x = m(&[2, 2], &[1.0, 2.0, 3.0, 4.0]);
        let w = m(&[1, 2], &[0.5, -1.0]);
        let g = m(&[2, 1], &[1.0, 2.0]);
        let grads = linear_backward(&x, &w, &g, true);
        assert_eq!(grads.weight.data(), &[7.0, 10.0]);
        assert_eq!(grads.bias.data(), &[3.0]);
        assert_eq!(grads.input.unwrap().data(), &[0.5, -1.0, 1.0, -2.0]);
    }
}
