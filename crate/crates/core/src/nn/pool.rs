use super::Layer;
use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MaxPool2d {
    pub window: usize,
    pub stride: usize,
}

impl Default for MaxPool2d {
    fn default() -> Self {
        Self { window: 2, stride: 2 }
    }
}

impl MaxPool2d {
    pub fn new(window: usize, stride: usize) -> Result<Self> {
        if window == 0 || stride == 0 {
            return Err(Error::BadConfig(format!(
                "pool window {window} and stride {stride} must be ≥ 1"
            )));
        }
        Ok(Self { window, stride })
    }
}

/// `floor((n − window) / stride) + 1`
pub fn pool_output_extent(n: usize, window: usize, stride: usize) -> Result<usize> {
    if n < window {
        return Err(Error::WindowTooLarge { window, extent: n });
    }
    Ok((n - window) / stride + 1)
}

/// Window maxima and, for each output, the flat input offset it came from.
/// Ties resolve to the first maximal element in row-major scan order.
pub fn maxpool2d_forward<T: Scalar>(x: &Tensor<T>, window: usize, stride: usize) -> Result<(Tensor<T>, Vec<usize>)> {
    let &[n, c, h, w] = x.shape() else {
        return Err(Error::shape(format!(
            "pool input must be [N,C,H,W], got {:?}",
            x.shape()
        )));
    };
    let ho = pool_output_extent(h, window, stride)?;
    let wo = pool_output_extent(w, window, stride)?;
    let mut out = Vec::with_capacity(n * c * ho * wo);
    let mut argmax = Vec::with_capacity(n * c * ho * wo);
    let data = x.data();
    for plane in 0..n * c {
        let base = plane * h * w;
        for i in 0..ho {
            for j in 0..wo {
                let mut best = base + i * stride * w + j * stride;
                for p in 0..window {
                    let row = base + (i * stride + p) * w + j * stride;
                    for off in row..row + window {
                        if data[off] > data[best] {
                            best = off;
                        }
                    }
                }
                out.push(data[best]);
                argmax.push(best);
            }
        }
    }
    Ok((Tensor::new(&[n, c, ho, wo], out)?, argmax))
}

/// Route each upstream gradient to its window's recorded argmax.
pub fn maxpool2d_backward<T: Scalar>(input_shape: &[usize], argmax: &[usize], grad_out: &Tensor<T>) -> Tensor<T> {
    let mut dx = Tensor::zeros(input_shape);
    let d = dx.data_mut();
    for (&src, &g) in argmax.iter().zip(grad_out.data()) {
        d[src] += g;
    }
    dx
}

impl<T: Scalar> Layer<T> for MaxPool2d {
    fn kind(&self) -> &'static str {
        "maxpool2d"
    }

    fn forward(&mut self, tape: &mut Tape<T>, x: Var) -> Result<Var> {
        let shape = tape.value(x).shape().to_vec();
        let (out, argmax) = maxpool2d_forward(tape.value(x), self.window, self.stride)?;
        tape.record(
            "maxpool2d",
            &[x],
            out,
            Box::new(move |g, _| vec![Some(maxpool2d_backward(&shape, &argmax, g))]),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn brute_force(x: &Tensor<f64>, k: usize, s: usize) -> Vec<f64> {
        let [n, c, h, w] = [x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]];
        let mut out = Vec::new();
        for img in 0..n {
            for ch in 0..c {
                for i in 0..(h - k) / s + 1 {
                    for j in 0..(w - k) / s + 1 {
                        let mut m = f64::NEG_INFINITY;
                        for p in 0..k {
                            for q in 0..k {
                                m = m.max(x.get(&[img, ch, i * s + p, j * s + q]).unwrap());
                            }
                        }
                        out.push(m);
                    }
                }
            }
        }
        out
    }

    #[test]
    fn two_by_two() {
        let x = Tensor::<f64>::new(&[1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let (y, _) = maxpool2d_forward(&x, 2, 2).unwrap();
        assert_eq!(y.data(), &[4.0]);
    }

    #[test]
    fn constant_input_routes_to_first_cell() {
        let x = Tensor::<f64>::full(&[1, 1, 4, 4], 3.0);
        let (y, argmax) = maxpool2d_forward(&x, 2, 2).unwrap();
        assert!(y.data().iter().all(|&v| v == 3.0));
        let dx = maxpool2d_backward(x.shape(), &argmax, &Tensor::<f64>::ones(&[1, 1, 2, 2]));
        #[rustfmt::skip]
        let expected = [
            1.0, 0.0, 1.0, 0.0,
            0.0, 0.0, 0.0, 0.0,
            1.0, 0.0, 1.0, 0.0,
            0.0, 0.0, 0.0, 0.0,
        ];
        assert_eq!(dx.data(), &expected);
    }

    #[test]
    fn random_six_by_six_matches_window_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = Tensor::<f64>::rand_uniform(&[2, 3, 6, 6], -1.0, 1.0, &mut rng);
        let (y, _) = maxpool2d_forward(&x, 2, 2).unwrap();
        assert_eq!(y.data(), &brute_force(&x, 2, 2)[..]);
        let (y, _) = maxpool2d_forward(&x, 3, 1).unwrap();
        assert_eq!(y.data(), &brute_force(&x, 3, 1)[..]);
    }

    #[test]
    fn outputs_are_input_elements_bounded_by_max() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let x = Tensor::<f64>::rand_uniform(&[1, 2, 7, 5], -1.0, 1.0, &mut rng);
        let (y, argmax) = maxpool2d_forward(&x, 3, 2).unwrap();
        let global = x.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        for (&v, &src) in y.data().iter().zip(&argmax) {
            assert!(v <= global);
            assert_eq!(v, x.data()[src]);
        }
    }

    #[test]
    fn window_too_large() {
        let x = Tensor::<f64>::zeros(&[1, 1, 1, 3]);
        assert!(matches!(
            maxpool2d_forward(&x, 2, 2),
            Err(Error::WindowTooLarge { window: 2, extent: 1 })
        ));
    }
}
