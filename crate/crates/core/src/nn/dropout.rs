use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Layer, Mode};
use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Inverted dropout: survivors are scaled by `1/(1-p)` at train time, so
/// eval is the identity.
#[derive(Debug, Clone)]
pub struct Dropout {
    pub rate: f64,
    pub seed: u64,
    pub mode: Mode,
    /// Train-mode forwards so far; selects the RNG stream of the next mask.
    calls: u64,
}

impl Dropout {
    pub fn new(rate: f64, seed: u64) -> Result<Self> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::BadConfig(format!("dropout rate {rate} not in [0, 1)")));
        }
        Ok(Self {
            rate,
            seed,
            mode: Mode::Train,
            calls: 0,
        })
    }

    pub fn calls(&self) -> u64 {
        self.calls
    }
}

/// Keep-mask for `len` elements from stream `stream` of `seed`.
pub fn dropout_mask(len: usize, rate: f64, seed: u64, stream: u64) -> Vec<bool> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    (0..len).map(|_| rng.gen::<f64>() >= rate).collect()
}

impl<T: Scalar> Layer<T> for Dropout {
    fn kind(&self) -> &'static str {
        "dropout"
    }

    fn forward(&mut self, tape: &mut Tape<T>, x: Var) -> Result<Var> {
        if self.mode == Mode::Eval || self.rate == 0.0 {
            return Ok(x);
        }
        let xv = tape.value(x);
        let mask = dropout_mask(xv.numel(), self.rate, self.seed, self.calls);
        self.calls += 1;
        let scale = T::of_f64(1.0 / (1.0 - self.rate));
        let apply = move |t: &Tensor<T>| -> Tensor<T> {
            let data = t
                .data()
                .iter()
                .zip(mask.iter())
                .map(|(&v, &keep)| if keep { v * scale } else { T::zero() })
                .collect();
            Tensor::new(t.shape(), data).expect("same shape")
        };
        let out = apply(xv);
        tape.record("dropout", &[x], out, Box::new(move |g, _| vec![Some(apply(g))]))
    }

    fn set_mode(&mut self, mode: Mode) {
        self.mode = mode;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_chacha::ChaCha8Rng;

    fn run(d: &mut Dropout, x: &Tensor<f64>) -> Tensor<f64> {
        let mut tape = Tape::new();
        let v = tape.constant(x.clone());
        let y = d.forward(&mut tape, v).unwrap();
        tape.value(y).clone()
    }

    #[test]
    fn zero_rate_and_eval_are_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let x = Tensor::<f64>::rand_uniform(&[4, 8], -1.0, 1.0, &mut rng);
        let mut d = Dropout::new(0.0, 1).unwrap();
        assert_eq!(run(&mut d, &x), x);
        d.mode = Mode::Eval;
        assert_eq!(run(&mut d, &x), x);
        let mut d = Dropout::new(0.7, 1).unwrap();
        d.mode = Mode::Eval;
        assert_eq!(run(&mut d, &x), x);
    }

    #[test]
    fn train_zeroes_or_scales() {
        let x = Tensor::<f64>::full(&[1000], 2.0);
        let mut d = Dropout::new(0.25, 3).unwrap();
        let y = run(&mut d, &x);
        assert!(y.data().iter().all(|&v| v == 0.0 || (v - 2.0 / 0.75).abs() < 1e-15));
        let dropped = y.data().iter().filter(|&&v| v == 0.0).count();
        assert!((150..350).contains(&dropped), "{dropped}");
    }

    #[test]
    fn successive_masks_differ_but_are_seeded() {
        let x = Tensor::<f64>::ones(&[64]);
        let mut a = Dropout::new(0.5, 9).unwrap();
        let mut b = Dropout::new(0.5, 9).unwrap();
        let (a1, a2) = (run(&mut a, &x), run(&mut a, &x));
        let (b1, b2) = (run(&mut b, &x), run(&mut b, &x));
        assert_eq!(a1, b1);
        assert_eq!(a2, b2);
        assert_ne!(a1, a2);
    }

    #[test]
    fn bad_rate() {
        assert!(Dropout::new(1.0, 0).is_err());
        assert!(Dropout::new(-0.1, 0).is_err());
    }
}
