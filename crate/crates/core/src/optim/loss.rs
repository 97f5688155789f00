use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::nn::Layer;
use crate::tensor::{Scalar, Tensor};

fn check_logits<T: Scalar>(logits: &Tensor<T>, labels: &[usize]) -> Result<(usize, usize)> {
    let &[n, c] = logits.shape() else {
        return Err(Error::shape(format!("logits must be [N,C], got {:?}", logits.shape())));
    };
    if labels.len() != n {
        return Err(Error::shape(format!("{} labels for {n} rows", labels.len())));
    }
    if let Some(&label) = labels.iter().find(|&&l| l >= c) {
        return Err(Error::BadLabel { label, classes: c });
    }
    Ok((n, c))
}

/// Mean softmax cross-entropy and its gradient `(softmax − onehot) / N`.
/// Each row is shifted by its maximum before exponentiation.
pub fn softmax_cross_entropy<T: Scalar>(logits: &Tensor<T>, labels: &[usize]) -> Result<(T, Tensor<T>)> {
    let (n, c) = check_logits(logits, labels)?;
    if n == 0 {
        return Err(Error::EmptyBatch);
    }
    let inv_n = T::one() / T::of_f64(n as f64);
    let mut total = T::zero();
    let mut grad = vec![T::zero(); n * c];
    for (row, (&label, g)) in logits.data().chunks(c).zip(labels.iter().zip(grad.chunks_mut(c))) {
        let top = argmax(row);
        let max = row[top];
        // The top entry contributes exactly 1; summing the rest separately
        // keeps ln(1 + rest) and 1 − p_top accurate for confident rows.
        let mut rest = T::zero();
        for (i, (gi, &z)) in g.iter_mut().zip(row).enumerate() {
            let e = if i == top { T::one() } else { (z - max).exp() };
            *gi = e;
            if i != top {
                rest += e;
            }
        }
        let denom = T::one() + rest;
        total += rest.ln_1p() - (row[label] - max);
        for gi in g.iter_mut() {
            *gi = *gi / denom * inv_n;
        }
        if label == top {
            g[label] = -(rest / denom) * inv_n;
        } else {
            g[label] -= inv_n;
        }
    }
    Ok((total * inv_n, Tensor::new(&[n, c], grad)?))
}

/// Record mean softmax cross-entropy on the tape; returns the scalar loss.
pub fn cross_entropy<T: Scalar>(tape: &mut Tape<T>, logits: Var, labels: &[usize]) -> Result<Var> {
    let (loss, grad) = softmax_cross_entropy(tape.value(logits), labels)?;
    tape.record(
        "softmax_cross_entropy",
        &[logits],
        Tensor::scalar(loss),
        Box::new(move |g, _| {
            let s = g.data()[0];
            vec![Some(grad.map(|v| v * s))]
        }),
    )
}

/// The loss as a [`Layer`] with fixed labels, so it can be gradient-checked
/// like any other layer.
#[derive(Debug, Clone)]
pub struct CrossEntropyLoss {
    pub labels: Vec<usize>,
}

impl<T: Scalar> Layer<T> for CrossEntropyLoss {
    fn kind(&self) -> &'static str {
        "softmax_cross_entropy"
    }

    fn forward(&mut self, tape: &mut Tape<T>, x: Var) -> Result<Var> {
        cross_entropy(tape, x, &self.labels)
    }
}

/// Index of the largest logit per row, ties to the lowest index.
pub fn argmax_rows<T: Scalar>(logits: &Tensor<T>) -> Result<Vec<usize>> {
    let &[_, c] = logits.shape() else {
        return Err(Error::shape(format!("logits must be [N,C], got {:?}", logits.shape())));
    };
    Ok(logits.data().chunks(c.max(1)).map(argmax).collect())
}

fn argmax<T: Scalar>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Fraction of rows whose argmax equals the label.
pub fn accuracy<T: Scalar>(logits: &Tensor<T>, labels: &[usize]) -> Result<f64> {
    let (n, _) = check_logits(logits, labels)?;
    if n == 0 {
        return Err(Error::EmptyBatch);
    }
    let hits = argmax_rows(logits)?.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(hits as f64 / n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn m(shape: &[usize], d: &[f64]) -> Tensor<f64> {
        Tensor::new(shape, d.to_vec()).unwrap()
    }

    #[test]
    fn equal_logits_give_ln2() {
        let (loss, _) = softmax_cross_entropy(&m(&[1, 2], &[0.3, 0.3]), &[1]).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn confident_logits() {
        // log(1 + e^-20) and e^-20 / (1 + e^-20), evaluated at 50 digits.
        let (loss, grad) = softmax_cross_entropy(&m(&[1, 2], &[10.0, -10.0]), &[0]).unwrap();
        assert!((loss - 2.061_153_620_314_381e-9).abs() < 1e-20, "{loss}");
        assert!((grad.data()[0] + 2.061_153_618_190_203_6e-9).abs() < 1e-20);
        assert!((grad.data()[1] - 2.061_153_618_190_203_6e-9).abs() < 1e-20);
    }

    #[test]
    fn shift_invariance_and_zero_row_sums() {
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        for _ in 0..20 {
            let logits = Tensor::<f64>::rand_uniform(&[4, 5], -3.0, 3.0, &mut rng);
            let labels: Vec<usize> = (0..4).map(|_| rng.gen_range(0..5)).collect();
            let shifts: Vec<f64> = (0..4).map(|_| rng.gen_range(-50.0..50.0)).collect();
            let shifted = Tensor::from_fn(&[4, 5], |i| logits.data()[i] + shifts[i / 5]);
            let (l1, g1) = softmax_cross_entropy(&logits, &labels).unwrap();
            let (l2, g2) = softmax_cross_entropy(&shifted, &labels).unwrap();
            assert!((l1 - l2).abs() <= 1e-12);
            for (a, b) in g1.data().iter().zip(g2.data()) {
                assert!((a - b).abs() <= 1e-12);
            }
            for row in g1.data().chunks(5) {
                assert!(row.iter().sum::<f64>().abs() <= 1e-10);
            }
        }
    }

    #[test]
    fn bad_label_and_empty() {
        assert!(matches!(
            softmax_cross_entropy(&m(&[1, 2], &[0.0, 0.0]), &[2]),
            Err(Error::BadLabel { label: 2, classes: 2 })
        ));
        assert!(matches!(
            accuracy(&Tensor::<f64>::zeros(&[0, 2]), &[]),
            Err(Error::EmptyBatch)
        ));
    }

    #[test]
    fn accuracy_examples() {
        let onehot = m(&[3, 3], &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
        assert_eq!(accuracy(&onehot, &[0, 1, 2]).unwrap(), 1.0);
        assert_eq!(accuracy(&Tensor::<f64>::zeros(&[4, 2]), &[0, 0, 0, 0]).unwrap(), 1.0);
        assert_eq!(accuracy(&Tensor::<f64>::zeros(&[4, 2]), &[1, 1, 0, 0]).unwrap(), 0.5);
    }

    #[test]
    fn argmax_matches_scalar_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let logits = Tensor::<f64>::rand_uniform(&[50, 7], -1.0, 1.0, &mut rng);
        let pred = argmax_rows(&logits).unwrap();
        for (n, &p) in pred.iter().enumerate() {
            let mut best = 0;
            let mut best_v = f64::NEG_INFINITY;
            for c in 0..7 {
                let v = logits.get(&[n, c]).unwrap();
                if v > best_v {
                    best_v = v;
                    best = c;
                }
            }
            assert_eq!(p, best);
        }
    }
}
