use std::sync::Arc;

use rayon::prelude::*;

use super::{exec_mode, gemm, numel_of, strides_of, ExecMode, Scalar, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReduceKind {
    Sum,
    Mean,
    Max,
}

const FAST_CHUNK: usize = 1 << 14;

impl<T: Scalar> Tensor<T> {
    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape.clone(),
            data: Arc::new(self.data.iter().map(|&v| f(v)).collect()),
        }
    }

    pub fn zip(&self, other: &Self, f: impl Fn(T, T) -> T) -> Result<Self> {
        if self.shape != other.shape {
            return Err(Error::shape(format!("zip of {:?} and {:?}", self.shape, other.shape)));
        }
        Ok(Self {
            shape: self.shape.clone(),
            data: Arc::new(
                self.data
                    .iter()
                    .zip(other.data.iter())
                    .map(|(&a, &b)| f(a, b))
                    .collect(),
            ),
        })
    }

    /// Sum of every element, accumulated left to right in deterministic mode.
    pub fn sum_all(&self) -> T {
        if exec_mode() == ExecMode::Fast && self.data.len() > FAST_CHUNK {
            let partials: Vec<T> = self
                .data
                .par_chunks(FAST_CHUNK)
                .map(|c| c.iter().fold(T::zero(), |acc, &v| acc + v))
                .collect();
            partials.into_iter().fold(T::zero(), |acc, v| acc + v)
        } else {
            self.data.iter().fold(T::zero(), |acc, &v| acc + v)
        }
    }

    /// Reduce over `axes`, removing them from the shape.
    ///
    /// Each output element accumulates its inputs in increasing row-major
    /// offset order. Sum over an empty extent is 0; mean and max over an
    /// empty extent are `EmptyReduce`.
    pub fn reduce(&self, axes: &[usize], kind: ReduceKind) -> Result<Self> {
        let rank = self.rank();
        let mut reduced = vec![false; rank];
        for &axis in axes {
            if axis >= rank || reduced[axis] {
                return Err(Error::BadAxis { axis, rank });
            }
            reduced[axis] = true;
        }
        let out_shape: Vec<usize> = self
            .shape
            .iter()
            .zip(&reduced)
            .filter(|(_, &r)| !r)
            .map(|(&n, _)| n)
            .collect();
        let count: usize = self
            .shape
            .iter()
            .zip(&reduced)
            .filter(|(_, &r)| r)
            .map(|(&n, _)| n)
            .product();
        let out_len = numel_of(&out_shape);
        if count == 0 && out_len > 0 && kind != ReduceKind::Sum {
            return Err(Error::EmptyReduce);
        }

        if out_len == 1 && kind != ReduceKind::Max {
            let total = self.sum_all();
            let v = match kind {
                ReduceKind::Mean => total / T::of_f64(count as f64),
                _ => total,
            };
            return Tensor::new(&out_shape, vec![v]);
        }

        // Output stride for each input axis (0 when reduced).
        let out_strides = strides_of(&out_shape);
        let mut in_to_out = vec![0usize; rank];
        let mut k = 0;
        for (axis, r) in reduced.iter().enumerate() {
            if !r {
                in_to_out[axis] = out_strides[k];
                k += 1;
            }
        }

        let init = match kind {
            ReduceKind::Max => T::neg_infinity(),
            _ => T::zero(),
        };
        let mut out = vec![init; out_len];
        let mut index = vec![0usize; rank];
        let mut out_off = 0usize;
        for &v in self.data.iter() {
            match kind {
                ReduceKind::Max => {
                    if v > out[out_off] || out[out_off].is_nan() {
                        out[out_off] = v;
                    }
                }
                _ => out[out_off] += v,
            }
            // Advance the row-major multi-index and the matching output offset.
            for axis in (0..rank).rev() {
                index[axis] += 1;
                out_off += in_to_out[axis];
                if index[axis] < self.shape[axis] {
                    break;
                }
                out_off -= in_to_out[axis] * index[axis];
                index[axis] = 0;
            }
        }
        if kind == ReduceKind::Mean {
            let n = T::of_f64(count as f64);
            for v in &mut out {
                *v /= n;
            }
        }
        Tensor::new(&out_shape, out)
    }

    /// Pad the two trailing axes of an `[N,C,H,W]` tensor with `value`.
    pub fn pad2d(&self, pad: usize, value: T) -> Result<Self> {
        let [n, c, h, w] = dims4(self)?;
        if pad == 0 {
            return Ok(self.clone());
        }
        let (hp, wp) = (h + 2 * pad, w + 2 * pad);
        let mut out = vec![value; n * c * hp * wp];
        if h * w == 0 {
            return Tensor::new(&[n, c, hp, wp], out);
        }
        for (plane_in, plane_out) in self.data.chunks(h * w).zip(out.chunks_mut(hp * wp)).take(n * c) {
            for y in 0..h {
                let dst = (y + pad) * wp + pad;
                plane_out[dst..dst + w].copy_from_slice(&plane_in[y * w..(y + 1) * w]);
            }
        }
        Tensor::new(&[n, c, hp, wp], out)
    }

    pub fn matmul(&self, other: &Self) -> Result<Self> {
        let (m, k) = dims2(self)?;
        let (k2, n) = dims2(other)?;
        if k != k2 {
            return Err(Error::shape(format!(
                "matmul inner extents {:?} x {:?}",
                self.shape, other.shape
            )));
        }
        let mut out = vec![T::zero(); m * n];
        gemm(m, k, n, &self.data, &other.data, &mut out);
        Tensor::new(&[m, n], out)
    }

    pub fn transpose2d(&self) -> Result<Self> {
        let (m, n) = dims2(self)?;
        let mut out = vec![T::zero(); m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = self.data[i * n + j];
            }
        }
        Tensor::new(&[n, m], out)
    }
}

pub(crate) fn dims2<T: Scalar>(t: &Tensor<T>) -> Result<(usize, usize)> {
    match *t.shape() {
        [a, b] => Ok((a, b)),
        ref s => Err(Error::shape(format!("expected a matrix, got shape {s:?}"))),
    }
}

pub(crate) fn dims4<T: Scalar>(t: &Tensor<T>) -> Result<[usize; 4]> {
    match *t.shape() {
        [n, c, h, w] => Ok([n, c, h, w]),
        ref s => Err(Error::shape(format!("expected [N,C,H,W], got shape {s:?}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::set_exec_mode;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::new(shape, data.to_vec()).unwrap()
    }

    #[test]
    fn create_fill_and_data() {
        let z = Tensor::<f64>::zeros(&[2, 2]);
        assert_eq!(z.data(), &[0.0; 4]);
        let v = t(&[3], &[1.0, 2.0, 3.0]);
        assert_eq!(v.data(), &[1.0, 2.0, 3.0]);
        assert!(matches!(
            Tensor::<f64>::new(&[2, 3], vec![0.0; 5]),
            Err(Error::ShapeMismatch(_))
        ));
    }

    #[test]
    fn row_major_offsets() {
        let x = Tensor::<f64>::from_fn(&[2, 3, 4], |i| i as f64);
        assert_eq!(x.strides(), vec![12, 4, 1]);
        assert_eq!(x.get(&[1, 2, 3]).unwrap(), 23.0);
        assert!(x.get(&[2, 0, 0]).is_err());
    }

    #[test]
    fn empty_tensors_are_legal() {
        let e = Tensor::<f64>::zeros(&[0, 3]);
        assert_eq!(e.numel(), 0);
        let s = e.reduce(&[0], ReduceKind::Sum).unwrap();
        assert_eq!(s.data(), &[0.0; 3]);
        assert!(matches!(e.reduce(&[0], ReduceKind::Max), Err(Error::EmptyReduce)));
        assert!(matches!(e.reduce(&[0], ReduceKind::Mean), Err(Error::EmptyReduce)));
    }

    #[test]
    fn matmul_examples() {
        let eye = t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]);
        let m = t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(eye.matmul(&m).unwrap(), m);
        let r = t(&[1, 2], &[1.0, 2.0]).matmul(&t(&[2, 1], &[3.0, 4.0])).unwrap();
        assert_eq!(r.data(), &[11.0]);
        assert!(matches!(
            t(&[1, 2], &[1.0, 2.0]).matmul(&m.reshape(&[4, 1]).unwrap()),
            Err(Error::ShapeMismatch(_))
        ));
    }

    fn naive_matmul(a: &Tensor<f64>, b: &Tensor<f64>) -> Vec<f64> {
        let (m, k) = (a.shape()[0], a.shape()[1]);
        let n = b.shape()[1];
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                let mut acc = 0.0;
                for p in 0..k {
                    acc += a.data()[i * k + p] * b.data()[p * n + j];
                }
                out[i * n + j] = acc;
            }
        }
        out
    }

    #[test]
    fn matmul_matches_triple_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = Tensor::<f64>::rand_uniform(&[5, 7], -1.0, 1.0, &mut rng);
        let b = Tensor::<f64>::rand_uniform(&[7, 3], -1.0, 1.0, &mut rng);
        assert_eq!(a.matmul(&b).unwrap().data(), &naive_matmul(&a, &b)[..]);
    }

    #[test]
    fn transposed_kernels_agree_with_explicit_transpose() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let a = Tensor::<f64>::rand_uniform(&[4, 6], -1.0, 1.0, &mut rng);
        let b = Tensor::<f64>::rand_uniform(&[5, 6], -1.0, 1.0, &mut rng);
        let mut nt = vec![0.0; 20];
        gemm::gemm_nt(4, 6, 5, a.data(), b.data(), &mut nt);
        assert_eq!(nt, naive_matmul(&a, &b.transpose2d().unwrap()));

        let c = Tensor::<f64>::rand_uniform(&[6, 5], -1.0, 1.0, &mut rng);
        let mut tn = vec![0.0; 20];
        gemm::gemm_tn(4, 6, 5, a.transpose2d().unwrap().data(), c.data(), &mut tn);
        assert_eq!(tn, naive_matmul(&a, &c));
    }

    #[test]
    fn map_and_zip() {
        let x = t(&[3], &[-1.0, 0.0, 2.0]);
        assert_eq!(x.map(|v| -v).data(), &[1.0, -0.0, -2.0]);
        let s = t(&[2], &[1.0, 2.0]).zip(&t(&[2], &[3.0, 4.0]), |a, b| a + b).unwrap();
        assert_eq!(s.data(), &[4.0, 6.0]);
        assert!(t(&[2], &[1.0, 2.0])
            .zip(&t(&[3], &[3.0, 4.0, 5.0]), |a, b| a + b)
            .is_err());
    }

    #[test]
    fn reduce_examples() {
        let x = t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(x.reduce(&[1], ReduceKind::Sum).unwrap().data(), &[3.0, 7.0]);
        let y = t(&[2, 2], &[1.0, 5.0, 2.0, 3.0]);
        assert_eq!(y.reduce(&[0], ReduceKind::Max).unwrap().data(), &[2.0, 5.0]);
        let ones = Tensor::<f64>::ones(&[4, 4]);
        let m = ones.reduce(&[0, 1], ReduceKind::Mean).unwrap();
        assert_eq!(m.shape(), &[] as &[usize]);
        assert_eq!(m.item().unwrap(), 1.0);
        assert!(matches!(x.reduce(&[2], ReduceKind::Sum), Err(Error::BadAxis { .. })));
        assert!(matches!(x.reduce(&[0, 0], ReduceKind::Sum), Err(Error::BadAxis { .. })));
    }

    #[test]
    fn reduce_middle_axis() {
        let x = Tensor::<f64>::from_fn(&[2, 3, 2], |i| i as f64);
        let r = x.reduce(&[1], ReduceKind::Sum).unwrap();
        assert_eq!(r.shape(), &[2, 2]);
        assert_eq!(r.data(), &[6.0, 9.0, 24.0, 27.0]);
        let r = x.reduce(&[0, 2], ReduceKind::Max).unwrap();
        assert_eq!(r.data(), &[7.0, 9.0, 11.0]);
    }

    #[test]
    fn pad2d_examples() {
        let x = t(&[1, 1, 1, 1], &[5.0]);
        assert_eq!(x.pad2d(0, 0.0).unwrap(), x);
        let p = x.pad2d(1, 0.0).unwrap();
        assert_eq!(p.shape(), &[1, 1, 3, 3]);
        assert_eq!(p.data(), &[0.0, 0.0, 0.0, 0.0, 5.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn fast_mode_sum_is_close() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Tensor::<f64>::rand_uniform(&[100_000], 0.0, 1.0, &mut rng);
        let ordered = x.sum_all();
        set_exec_mode(ExecMode::Fast);
        let fast = x.sum_all();
        set_exec_mode(ExecMode::Deterministic);
        assert!((ordered - fast).abs() < 1e-8);
    }

    fn small_shape(max_rank: usize) -> impl Strategy<Value = Vec<usize>> {
        prop::collection::vec(0usize..5, 0..=max_rank)
    }

    proptest! {
        #[test]
        fn sum_over_all_axes_is_sequential(shape in small_shape(4), seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = Tensor::<f64>::rand_uniform(&shape, -1.0, 1.0, &mut rng);
            let axes: Vec<usize> = (0..shape.len()).collect();
            let r = x.reduce(&axes, ReduceKind::Sum).unwrap();
            let mut acc = 0.0;
            for &v in x.data() {
                acc += v;
            }
            prop_assert_eq!(r.item().unwrap(), acc);
        }

        #[test]
        fn reduce_shape_depends_only_on_input_shape(shape in small_shape(4), mask in any::<u8>()) {
            let axes: Vec<usize> = (0..shape.len()).filter(|a| mask & (1 << a) != 0).collect();
            let a = Tensor::<f64>::zeros(&shape).reduce(&axes, ReduceKind::Sum).unwrap();
            let b = Tensor::<f64>::ones(&shape).reduce(&axes, ReduceKind::Sum).unwrap();
            let expected: Vec<usize> = shape.iter().enumerate()
                .filter(|(i, _)| !axes.contains(i)).map(|(_, &n)| n).collect();
            prop_assert_eq!(a.shape(), &expected[..]);
            prop_assert_eq!(b.shape(), &expected[..]);
        }

        #[test]
        fn map_zip_preserve_shape(shape in small_shape(3), seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = Tensor::<f64>::rand_uniform(&shape, -1.0, 1.0, &mut rng);
            let b = Tensor::<f64>::rand_uniform(&shape, -1.0, 1.0, &mut rng);
            let doubled = a.map(|v| v * 2.0);
            prop_assert_eq!(doubled.shape(), &shape[..]);
            let ab = a.zip(&b, |x, y| x + y).unwrap();
            let ba = b.zip(&a, |x, y| x + y).unwrap();
            prop_assert_eq!(ab.shape(), &shape[..]);
            prop_assert_eq!(ab, ba);
        }

        #[test]
        fn pad2d_preserves_sum_and_interior(
            n in 1usize..3, c in 1usize..3, h in 0usize..5, w in 0usize..5,
            pad in 0usize..3, seed in any::<u64>()
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = Tensor::<f64>::rand_uniform(&[n, c, h, w], 0.0, 1.0, &mut rng);
            let p = x.pad2d(pad, 0.0).unwrap();
            prop_assert_eq!(p.shape(), &[n, c, h + 2 * pad, w + 2 * pad][..]);
            prop_assert!((p.sum_all() - x.sum_all()).abs() < 1e-12);
            for i in 0..n { for ch in 0..c { for y in 0..h { for xx in 0..w {
                prop_assert_eq!(
                    p.get(&[i, ch, y + pad, xx + pad]).unwrap(),
                    x.get(&[i, ch, y, xx]).unwrap()
                );
            }}}}
        }

        #[test]
        fn matmul_shape_is_m_by_n(m in 0usize..6, k in 0usize..6, n in 0usize..6) {
            let a = Tensor::<f64>::ones(&[m, k]);
            let b = Tensor::<f64>::ones(&[k, n]);
            let c = a.matmul(&b).unwrap();
            prop_assert_eq!(c.shape(), &[m, n][..]);
            prop_assert!(c.data().iter().all(|&v| v == k as f64));
        }
    }
}
