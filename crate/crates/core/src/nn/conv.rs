//! 2-D convolution (cross-correlation, no kernel flip) via im2col + GEMM.

use rand::Rng;
use rayon::prelude::*;

use super::{he_uniform, Layer};
use crate::autograd::{Parameter, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{exec_mode, gemm, gemm_nt, gemm_tn, ExecMode, Scalar, Tensor};

#[derive(Debug, Clone)]
pub struct Conv2d<T: Scalar = f32> {
    /// `[C_out, C_in, k, k]`
    pub kernels: Parameter<T>,
    /// `[C_out]`
    pub bias: Parameter<T>,
    pub stride: usize,
    pub padding: usize,
}

impl<T: Scalar> Conv2d<T> {
    pub fn new<R: Rng + ?Sized>(
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let kernels = he_uniform(&[c_out, c_in, kernel, kernel], c_in * kernel * kernel, rng);
        Self::from_parts(name, kernels, Tensor::zeros(&[c_out]), stride, padding)
    }

    pub fn from_parts(name: &str, kernels: Tensor<T>, bias: Tensor<T>, stride: usize, padding: usize) -> Result<Self> {
        let &[c_out, _, kh, kw] = kernels.shape() else {
            return Err(Error::shape(format!(
                "conv kernels must be rank 4, got {:?}",
                kernels.shape()
            )));
        };
        if kh != kw || kh == 0 {
            return Err(Error::shape(format!("conv kernel must be square k≥1, got {kh}x{kw}")));
        }
        if bias.shape() != [c_out] {
            return Err(Error::shape(format!(
                "conv bias {:?} for {c_out} outputs",
                bias.shape()
            )));
        }
        if stride == 0 {
            return Err(Error::BadConfig("conv stride must be ≥ 1".into()));
        }
        Ok(Self {
            kernels: Parameter::new(format!("{name}.weight"), kernels),
            bias: Parameter::new(format!("{name}.bias"), bias),
            stride,
            padding,
        })
    }
}

/// `floor((n + 2·pad − k) / stride) + 1`
pub fn conv_output_extent(n: usize, kernel: usize, stride: usize, pad: usize) -> Result<usize> {
    let padded = n + 2 * pad;
    if padded < kernel {
        return Err(Error::KernelTooLarge { kernel, padded });
    }
    Ok((padded - kernel) / stride + 1)
}

struct Geometry {
    n: usize,
    c_in: usize,
    c_out: usize,
    k: usize,
    stride: usize,
    hp: usize,
    wp: usize,
    ho: usize,
    wo: usize,
}

impl Geometry {
    fn new<T: Scalar>(x: &Tensor<T>, kernels: &Tensor<T>, stride: usize, pad: usize) -> Result<Self> {
        let &[n, c_in, h, w] = x.shape() else {
            return Err(Error::shape(format!(
                "conv input must be [N,C,H,W], got {:?}",
                x.shape()
            )));
        };
        let &[c_out, kc, k, kw] = kernels.shape() else {
            return Err(Error::shape("conv kernels must be rank 4"));
        };
        if kw != k {
            return Err(Error::shape(format!("conv kernels must be square, got {k}×{kw}")));
        }
        if kc != c_in {
            return Err(Error::shape(format!("conv expects {kc} input channels, got {c_in}")));
        }
        let ho = conv_output_extent(h, k, stride, pad)?;
        let wo = conv_output_extent(w, k, stride, pad)?;
        Ok(Self {
            n,
            c_in,
            c_out,
            k,
            stride,
            hp: h + 2 * pad,
            wp: w + 2 * pad,
            ho,
            wo,
        })
    }

    fn rows(&self) -> usize {
        self.c_in * self.k * self.k
    }

    fn positions(&self) -> usize {
        self.ho * self.wo
    }

    /// Unfold one padded image `[C_in, Hp, Wp]` into `[C_in·k·k, Ho·Wo]`.
    fn im2col<T: Scalar>(&self, image: &[T], col: &mut [T]) {
        let (k, s, p) = (self.k, self.stride, self.positions());
        for c in 0..self.c_in {
            let plane = &image[c * self.hp * self.wp..(c + 1) * self.hp * self.wp];
            for dy in 0..k {
                for dx in 0..k {
                    let row = &mut col[((c * k + dy) * k + dx) * p..][..p];
                    for i in 0..self.ho {
                        let src = &plane[(i * s + dy) * self.wp + dx..];
                        for j in 0..self.wo {
                            row[i * self.wo + j] = src[j * s];
                        }
                    }
                }
            }
        }
    }

    /// Scatter-add `[C_in·k·k, Ho·Wo]` back onto a padded image.
    fn col2im<T: Scalar>(&self, col: &[T], image: &mut [T]) {
        let (k, s, p) = (self.k, self.stride, self.positions());
        for c in 0..self.c_in {
            let plane = &mut image[c * self.hp * self.wp..(c + 1) * self.hp * self.wp];
            for dy in 0..k {
                for dx in 0..k {
                    let row = &col[((c * k + dy) * k + dx) * p..][..p];
                    for i in 0..self.ho {
                        let base = (i * s + dy) * self.wp + dx;
                        for j in 0..self.wo {
                            plane[base + j * s] += row[i * self.wo + j];
                        }
                    }
                }
            }
        }
    }
}

/// `out[n,o,i,j] = bias[o] + Σ_{c,p,q} x_pad[n,c,i·s+p,j·s+q] · K[o,c,p,q]`,
/// accumulated starting from the bias in `(c, p, q)` order.
pub fn conv2d_forward<T: Scalar>(
    x: &Tensor<T>,
    kernels: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
    pad: usize,
) -> Result<Tensor<T>> {
    let g = Geometry::new(x, kernels, stride, pad)?;
    if bias.shape() != [g.c_out] {
        return Err(Error::shape(format!(
            "conv bias {:?} for {} outputs",
            bias.shape(),
            g.c_out
        )));
    }
    let xp = x.pad2d(pad, T::zero())?;
    let (rows, p) = (g.rows(), g.positions());
    let in_plane = g.c_in * g.hp * g.wp;
    let out_plane = g.c_out * p;
    let mut out = vec![T::zero(); g.n * out_plane];
    if out_plane > 0 {
        let per_image = |(img, dst): (usize, &mut [T])| {
            let mut col = vec![T::zero(); rows * p];
            g.im2col(&xp.data()[img * in_plane..(img + 1) * in_plane], &mut col);
            for (o, row) in dst.chunks_mut(p).enumerate() {
                row.fill(bias.data()[o]);
            }
            gemm(g.c_out, rows, p, kernels.data(), &col, dst);
        };
        if exec_mode() == ExecMode::Fast {
            out.par_chunks_mut(out_plane).enumerate().for_each(per_image);
        } else {
            out.chunks_mut(out_plane).enumerate().for_each(per_image);
        }
    }
    Tensor::new(&[g.n, g.c_out, g.ho, g.wo], out)
}

pub struct Conv2dGrads<T> {
    pub input: Option<Tensor<T>>,
    pub kernels: Tensor<T>,
    pub bias: Tensor<T>,
}

/// Gradients of [`conv2d_forward`] given the upstream gradient `grad_out`.
/// The input gradient is skipped unless `want_input`.
pub fn conv2d_backward<T: Scalar>(
    x: &Tensor<T>,
    kernels: &Tensor<T>,
    stride: usize,
    pad: usize,
    grad_out: &Tensor<T>,
    want_input: bool,
) -> Result<Conv2dGrads<T>> {
    let g = Geometry::new(x, kernels, stride, pad)?;
    if grad_out.shape() != [g.n, g.c_out, g.ho, g.wo] {
        return Err(Error::shape(format!("conv grad {:?}", grad_out.shape())));
    }
    let xp = x.pad2d(pad, T::zero())?;
    let (rows, p) = (g.rows(), g.positions());
    let in_plane = g.c_in * g.hp * g.wp;
    let out_plane = g.c_out * p;

    let mut d_bias = vec![T::zero(); g.c_out];
    let mut d_kernels = vec![T::zero(); g.c_out * rows];
    let mut col = vec![T::zero(); rows * p];
    for img in 0..g.n {
        let go = &grad_out.data()[img * out_plane..(img + 1) * out_plane];
        for (o, row) in go.chunks(p.max(1)).enumerate().take(g.c_out) {
            for &v in row {
                d_bias[o] += v;
            }
        }
        g.im2col(&xp.data()[img * in_plane..(img + 1) * in_plane], &mut col);
        gemm_nt(g.c_out, p, rows, go, &col, &mut d_kernels);
    }

    let input = if want_input {
        let mut dxp = vec![T::zero(); g.n * in_plane];
        let per_image = |(img, dst): (usize, &mut [T])| {
            let go = &grad_out.data()[img * out_plane..(img + 1) * out_plane];
            let mut dcol = vec![T::zero(); rows * p];
            gemm_tn(rows, g.c_out, p, kernels.data(), go, &mut dcol);
            g.col2im(&dcol, dst);
        };
        if in_plane > 0 {
            if exec_mode() == ExecMode::Fast {
                dxp.par_chunks_mut(in_plane).enumerate().for_each(per_image);
            } else {
                dxp.chunks_mut(in_plane).enumerate().for_each(per_image);
            }
        }
        Some(crop(&dxp, &g, pad, x.shape())?)
    } else {
        None
    };

    Ok(Conv2dGrads {
        input,
        kernels: Tensor::new(kernels.shape(), d_kernels)?,
        bias: Tensor::new(&[g.c_out], d_bias)?,
    })
}

fn crop<T: Scalar>(padded: &[T], g: &Geometry, pad: usize, shape: &[usize]) -> Result<Tensor<T>> {
    if pad == 0 {
        return Tensor::new(shape, padded.to_vec());
    }
    let (h, w) = (shape[2], shape[3]);
    let mut out = Vec::with_capacity(g.n * g.c_in * h * w);
    for plane in padded.chunks(g.hp * g.wp) {
        for y in 0..h {
            let start = (y + pad) * g.wp + pad;
            out.extend_from_slice(&plane[start..start + w]);
        }
    }
    Tensor::new(shape, out)
}

impl<T: Scalar> Layer<T> for Conv2d<T> {
    fn kind(&self) -> &'static str {
        "conv2d"
    }

    fn forward(&mut self, tape: &mut Tape<T>, x: Var) -> Result<Var> {
        let k = tape.param(&self.kernels);
        let b = tape.param(&self.bias);
        let xv = tape.value(x).clone();
        let kv = self.kernels.value.clone();
        let out = conv2d_forward(&xv, &kv, &self.bias.value, self.stride, self.padding)?;
        let (stride, pad) = (self.stride, self.padding);
        tape.record(
            "conv2d",
            &[x, k, b],
            out,
            Box::new(move |g, needs| {
                let grads = conv2d_backward(&xv, &kv, stride, pad, g, needs[0]).expect("shapes validated in forward");
                vec![grads.input, Some(grads.kernels), Some(grads.bias)]
            }),
        )
    }

    fn parameters(&self) -> Vec<&Parameter<T>> {
        vec![&self.kernels, &self.bias]
    }

    fn parameters_mut(&mut self) -> Vec<&mut Parameter<T>> {
        vec![&mut self.kernels, &mut self.bias]
    }
}
