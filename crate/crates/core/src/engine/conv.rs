//! 2-D convolution (cross-correlation, no kernel flip).
//!
//! Two implementations share one contract: a direct nested-loop path that
//! also counts its multiplications, and an im2col + GEMM path used for
//! training. They agree to rounding.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct ConvLayerParams<F = f32> {
    /// `(c_out, c_in, k, k)`
    pub kernels: Tensor<F>,
    /// `(c_out)`
    pub bias: Tensor<F>,
    pub stride: usize,
    pub pad: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvGrads<F = f32> {
    pub input: Tensor<F>,
    pub kernels: Tensor<F>,
    pub bias: Tensor<F>,
}

/// Output side of a convolution or pooling window, `None` when the window
/// does not fit.
pub fn output_side(h: usize, k: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = h + 2 * pad;
    if stride == 0 || k == 0 || padded < k {
        return None;
    }
    Some((padded - k) / stride + 1)
}

impl<F: Scalar> ConvLayerParams<F> {
    pub fn new(kernels: Tensor<F>, bias: Tensor<F>, stride: usize, pad: usize) -> Result<Self> {
        let (c_out, _, kh, kw) = kernels.dims4()?;
        if kh != kw {
            return Err(Error::shape(
                "conv",
                format!("kernels must be square, got {kh}x{kw}"),
            ));
        }
        if bias.shape() != [c_out] {
            return Err(Error::shape(
                "conv",
                format!("bias shape {:?} does not match c_out {c_out}", bias.shape()),
            ));
        }
        if stride == 0 {
            return Err(Error::InvalidArgument("conv stride must be positive".into()));
        }
        Ok(ConvLayerParams {
            kernels,
            bias,
            stride,
            pad,
        })
    }

    pub fn c_out(&self) -> usize {
        self.kernels.shape()[0]
    }

    pub fn c_in(&self) -> usize {
        self.kernels.shape()[1]
    }

    pub fn k(&self) -> usize {
        self.kernels.shape()[2]
    }

    /// Validates `input` and returns `(n, h, w, oh, ow)`.
    fn geometry(&self, input: &Tensor<F>) -> Result<(usize, usize, usize, usize, usize)> {
        let (n, c, h, w) = input.dims4()?;
        if c != self.c_in() {
            return Err(Error::shape(
                "conv2d",
                format!("input has {c} channels, kernels expect c_in = {}", self.c_in()),
            ));
        }
        let k = self.k();
        let oh = output_side(h, k, self.stride, self.pad);
        let ow = output_side(w, k, self.stride, self.pad);
        match (oh, ow) {
            (Some(oh), Some(ow)) => Ok((n, h, w, oh, ow)),
            _ => Err(Error::shape(
                "conv2d",
                format!(
                    "padded input {}x{} (pad {}) smaller than kernel {k}x{k}",
                    h + 2 * self.pad,
                    w + 2 * self.pad,
                    self.pad
                ),
            )),
        }
    }
}

/// Direct convolution. Returns the output and the number of scalar
/// multiplications performed; taps that fall on zero padding are skipped
/// and not counted.
pub fn conv2d_forward_naive<F: Scalar>(
    input: &Tensor<F>,
    params: &ConvLayerParams<F>,
) -> Result<(Tensor<F>, u64)> {
    let (n, h, w, oh, ow) = params.geometry(input)?;
    let (c_out, c_in, k) = (params.c_out(), params.c_in(), params.k());
    let (stride, pad) = (params.stride as isize, params.pad as isize);
    let x = input.data();
    let kern = params.kernels.data();
    let bias = params.bias.data();
    let mut out = vec![F::zero(); n * c_out * oh * ow];
    let mut mults = 0u64;
    for b in 0..n {
        for co in 0..c_out {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = F::zero();
                    for ci in 0..c_in {
                        for ky in 0..k {
                            let iy = oy as isize * stride + ky as isize - pad;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            for kx in 0..k {
                                let ix = ox as isize * stride + kx as isize - pad;
                                if ix < 0 || ix >= w as isize {
                                    continue;
                                }
                                let xv = x[((b * c_in + ci) * h + iy as usize) * w + ix as usize];
                                let kv = kern[((co * c_in + ci) * k + ky) * k + kx];
                                acc = acc + xv * kv;
                                mults += 1;
                            }
                        }
                    }
                    out[((b * c_out + co) * oh + oy) * ow + ox] = acc + bias[co];
                }
            }
        }
    }
    Ok((Tensor::new(vec![n, c_out, oh, ow], out)?, mults))
}

/// Unfolds one image into a `(c_in*k*k) x (oh*ow)` column matrix.
#[allow(clippy::too_many_arguments)]
fn im2col<F: Scalar>(
    img: &[F],
    c_in: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
    cols: &mut [F],
) {
    let p = oh * ow;
    for ci in 0..c_in {
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let dst = &mut cols[row * p..(row + 1) * p];
                for oy in 0..oh {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    let line = &mut dst[oy * ow..(oy + 1) * ow];
                    if iy < 0 || iy >= h as isize {
                        line.fill(F::zero());
                        continue;
                    }
                    let src = &img[(ci * h + iy as usize) * w..(ci * h + iy as usize + 1) * w];
                    for (ox, slot) in line.iter_mut().enumerate() {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        *slot = if ix < 0 || ix >= w as isize {
                            F::zero()
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters-and-adds columns back into an image.
#[allow(clippy::too_many_arguments)]
fn col2im<F: Scalar>(
    cols: &[F],
    c_in: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
    img: &mut [F],
) {
    let p = oh * ow;
    for ci in 0..c_in {
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let src = &cols[row * p..(row + 1) * p];
                for oy in 0..oh {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let base = (ci * h + iy as usize) * w;
                    for ox in 0..ow {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix >= 0 && ix < w as isize {
                            img[base + ix as usize] = img[base + ix as usize] + src[oy * ow + ox];
                        }
                    }
                }
            }
        }
    }
}

pub fn conv2d_forward<F: Scalar>(input: &Tensor<F>, params: &ConvLayerParams<F>) -> Result<Tensor<F>> {
    let (n, h, w, oh, ow) = params.geometry(input)?;
    let (c_out, c_in, k) = (params.c_out(), params.c_in(), params.k());
    let p = oh * ow;
    let ckk = c_in * k * k;
    let mut cols = vec![F::zero(); ckk * p];
    let mut out = vec![F::zero(); n * c_out * p];
    let img_len = c_in * h * w;
    for b in 0..n {
        let img = &input.data()[b * img_len..(b + 1) * img_len];
        im2col(img, c_in, h, w, k, params.stride, params.pad, oh, ow, &mut cols);
        let dst = &mut out[b * c_out * p..(b + 1) * c_out * p];
        for (co, row) in dst.chunks_mut(p).enumerate() {
            row.fill(params.bias.data()[co]);
        }
        F::gemm(
            c_out,
            ckk,
            p,
            F::one(),
            params.kernels.data(),
            (ckk as isize, 1),
            &cols,
            (p as isize, 1),
            F::one(),
            dst,
        );
    }
    Tensor::new(vec![n, c_out, oh, ow], out)
}

pub fn conv2d_backward<F: Scalar>(
    input: &Tensor<F>,
    params: &ConvLayerParams<F>,
    grad_out: &Tensor<F>,
) -> Result<ConvGrads<F>> {
    let (n, h, w, oh, ow) = params.geometry(input)?;
    let (c_out, c_in, k) = (params.c_out(), params.c_in(), params.k());
    let expected = [n, c_out, oh, ow];
    if grad_out.shape() != expected {
        return Err(Error::shape(
            "conv2d_backward",
            format!("grad_out {:?}, forward output {:?}", grad_out.shape(), expected),
        ));
    }
    let p = oh * ow;
    let ckk = c_in * k * k;
    let img_len = c_in * h * w;
    let mut cols = vec![F::zero(); ckk * p];
    let mut gcols = vec![F::zero(); ckk * p];
    let mut gk = vec![F::zero(); c_out * ckk];
    let mut gb = vec![F::zero(); c_out];
    let mut gi = vec![F::zero(); input.len()];
    for b in 0..n {
        let img = &input.data()[b * img_len..(b + 1) * img_len];
        let go = &grad_out.data()[b * c_out * p..(b + 1) * c_out * p];
        for (co, row) in go.chunks(p).enumerate() {
            gb[co] = row.iter().fold(gb[co], |acc, &v| acc + v);
        }
        im2col(img, c_in, h, w, k, params.stride, params.pad, oh, ow, &mut cols);
        // gk += go * cols^T
        F::gemm(
            c_out,
            p,
            ckk,
            F::one(),
            go,
            (p as isize, 1),
            &cols,
            (1, p as isize),
            F::one(),
            &mut gk,
        );
        // gcols = kernels^T * go
        F::gemm(
            ckk,
            c_out,
            p,
            F::one(),
            params.kernels.data(),
            (1, ckk as isize),
            go,
            (p as isize, 1),
            F::zero(),
            &mut gcols,
        );
        col2im(
            &gcols,
            c_in,
            h,
            w,
            k,
            params.stride,
            params.pad,
            oh,
            ow,
            &mut gi[b * img_len..(b + 1) * img_len],
        );
    }
    Ok(ConvGrads {
        input: Tensor::new(input.shape().to_vec(), gi)?,
        kernels: Tensor::new(params.kernels.shape().to_vec(), gk)?,
        bias: Tensor::new(vec![c_out], gb)?,
    })
}

/// Direct-loop backward pass, the reference for [`conv2d_backward`].
pub fn conv2d_backward_naive<F: Scalar>(
    input: &Tensor<F>,
    params: &ConvLayerParams<F>,
    grad_out: &Tensor<F>,
) -> Result<ConvGrads<F>> {
    let (n, h, w, oh, ow) = params.geometry(input)?;
    let (c_out, c_in, k) = (params.c_out(), params.c_in(), params.k());
    if grad_out.shape() != [n, c_out, oh, ow] {
        return Err(Error::shape(
            "conv2d_backward",
            format!("grad_out {:?}, forward output {:?}", grad_out.shape(), [n, c_out, oh, ow]),
        ));
    }
    let (stride, pad) = (params.stride as isize, params.pad as isize);
    let x = input.data();
    let kern = params.kernels.data();
    let go = grad_out.data();
    let mut gi = vec![F::zero(); input.len()];
    let mut gk = vec![F::zero(); kern.len()];
    let mut gb = vec![F::zero(); c_out];
    for b in 0..n {
        for co in 0..c_out {
            for oy in 0..oh {
                for ox in 0..ow {
                    let g = go[((b * c_out + co) * oh + oy) * ow + ox];
                    gb[co] = gb[co] + g;
                    for ci in 0..c_in {
                        for ky in 0..k {
                            let iy = oy as isize * stride + ky as isize - pad;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            for kx in 0..k {
                                let ix = ox as isize * stride + kx as isize - pad;
                                if ix < 0 || ix >= w as isize {
                                    continue;
                                }
                                let xi = ((b * c_in + ci) * h + iy as usize) * w + ix as usize;
                                let ki = ((co * c_in + ci) * k + ky) * k + kx;
                                gk[ki] = gk[ki] + g * x[xi];
                                gi[xi] = gi[xi] + g * kern[ki];
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(ConvGrads {
        input: Tensor::new(input.shape().to_vec(), gi)?,
        kernels: Tensor::new(params.kernels.shape().to_vec(), gk)?,
        bias: Tensor::new(vec![c_out], gb)?,
    })
}
