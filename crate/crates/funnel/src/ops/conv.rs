//! General 2-D convolution (cross-correlation, no kernel flip) with stride
//! and zero padding, for the backbone layers around the activations.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::par;
use crate::tensor::Tensor;

/// Full convolution parameters. Weights are `(c_out, c_in, kh, kw)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvParams {
    pub weights: Tensor,
    pub bias: Option<Vec<f64>>,
    pub stride: usize,
    pub padding: (usize, usize),
}

impl ConvParams {
    pub fn new(
        weights: Tensor,
        bias: Option<Vec<f64>>,
        stride: usize,
        padding: (usize, usize),
    ) -> Result<Self> {
        if stride == 0 {
            return Err(Error::InvalidArgument("stride must be >= 1".into()));
        }
        if let Some(b) = &bias {
            if b.len() != weights.shape().n {
                return Err(Error::ShapeMismatch(format!(
                    "bias has {} entries for {} output channels",
                    b.len(),
                    weights.shape().n
                )));
            }
        }
        Ok(ConvParams { weights, bias, stride, padding })
    }

    pub fn c_out(&self) -> usize {
        self.weights.shape().n
    }

    pub fn c_in(&self) -> usize {
        self.weights.shape().c
    }
}

pub struct ConvGrads {
    pub grad_x: Tensor,
    pub grad_weights: Tensor,
    pub grad_bias: Option<Vec<f64>>,
}

fn output_hw(x: &Tensor, p: &ConvParams) -> Result<(usize, usize)> {
    let xs = x.shape();
    let ws = p.weights.shape();
    if xs.c != ws.c {
        return Err(Error::ShapeMismatch(format!(
            "conv: input has {} channels, weights expect {}",
            xs.c, ws.c
        )));
    }
    let (ph, pw) = p.padding;
    if xs.h + 2 * ph < ws.h || xs.w + 2 * pw < ws.w {
        return Err(Error::InvalidShape(format!(
            "kernel {}x{} does not fit padded input {}x{}",
            ws.h,
            ws.w,
            xs.h + 2 * ph,
            xs.w + 2 * pw
        )));
    }
    Ok((
        (xs.h + 2 * ph - ws.h) / p.stride + 1,
        (xs.w + 2 * pw - ws.w) / p.stride + 1,
    ))
}

/// Valid output index range along one axis for a given kernel offset:
/// positions `o` in `[lo, hi)` satisfy `0 <= o*stride + d - pad < extent`.
#[inline]
fn valid_range(extent: usize, kernel_off: usize, pad: usize, stride: usize, out: usize) -> (usize, usize) {
    let lo = if kernel_off >= pad {
        0
    } else {
        (pad - kernel_off).div_ceil(stride)
    };
    // o*stride <= extent - 1 - kernel_off + pad
    let hi = match (extent + pad).checked_sub(kernel_off + 1) {
        Some(m) => (m / stride + 1).min(out),
        None => 0,
    };
    (lo.min(hi), hi)
}

/// Standard cross-correlation: out[n,o,i,j] = bias[o] + sum over (ci,di,dj)
/// of x_padded[n,ci,i*s+di,j*s+dj] * w[o,ci,di,dj].
pub fn conv_forward(x: &Tensor, p: &ConvParams) -> Result<Tensor> {
    let (oh, ow) = output_hw(x, p)?;
    let xs = x.shape();
    let c_out = p.c_out();
    let mut out = Tensor::zeros(xs.n, c_out, oh, ow)?;

    let plane = c_out * oh * ow;
    let run = |(n, out_chunk): (usize, &mut [f64])| forward_one(x, p, n, out_chunk, oh, ow);
    if xs.n > 1 && xs.n * plane >= par::PAR_THRESHOLD {
        par::pool().install(|| {
            out.data_mut().par_chunks_mut(plane).enumerate().for_each(run);
        });
    } else {
        out.data_mut().chunks_mut(plane).enumerate().for_each(run);
    }
    Ok(out)
}

fn forward_one(x: &Tensor, p: &ConvParams, n: usize, out_chunk: &mut [f64], oh: usize, ow: usize) {
    let xs = x.shape();
    let ws = p.weights.shape();
    let (ph, pw) = p.padding;
    let s = p.stride;
    let w = p.weights.data();
    for o in 0..ws.n {
        let o_ch = &mut out_chunk[o * oh * ow..(o + 1) * oh * ow];
        if let Some(b) = &p.bias {
            o_ch.fill(b[o]);
        }
        for ci in 0..xs.c {
            let x_ch = &x.data()[xs.index(n, ci, 0, 0)..xs.index(n, ci, 0, 0) + xs.h * xs.w];
            let w_k = &w[ws.index(o, ci, 0, 0)..ws.index(o, ci, 0, 0) + ws.h * ws.w];
            for di in 0..ws.h {
                let (i_lo, i_hi) = valid_range(xs.h, di, ph, s, oh);
                for dj in 0..ws.w {
                    let wv = w_k[di * ws.w + dj];
                    if wv == 0.0 {
                        continue;
                    }
                    let (j_lo, j_hi) = valid_range(xs.w, dj, pw, s, ow);
                    for i in i_lo..i_hi {
                        let ii = i * s + di - ph;
                        let x_row = &x_ch[ii * xs.w..ii * xs.w + xs.w];
                        let o_row = &mut o_ch[i * ow..i * ow + ow];
                        let mut xi = j_lo * s + dj - pw;
                        for j in j_lo..j_hi {
                            o_row[j] += wv * x_row[xi];
                            xi += s;
                        }
                    }
                }
            }
        }
    }
}

/// Exact adjoints of `conv_forward` for input, weights, and bias.
pub fn conv_backward(x: &Tensor, p: &ConvParams, grad_out: &Tensor) -> Result<ConvGrads> {
    let (oh, ow) = output_hw(x, p)?;
    let xs = x.shape();
    let gs = grad_out.shape();
    if gs.n != xs.n || gs.c != p.c_out() || gs.h != oh || gs.w != ow {
        return Err(Error::ShapeMismatch(format!(
            "conv backward: grad_out {} does not match output ({},{},{},{})",
            gs,
            xs.n,
            p.c_out(),
            oh,
            ow
        )));
    }

    let ws = p.weights.shape();
    let (ph, pw) = p.padding;
    let s = p.stride;

    let per_sample = |n: usize| -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let mut gx = vec![0.0; xs.c * xs.h * xs.w];
        let mut gw = vec![0.0; ws.len()];
        let mut gb = vec![0.0; ws.n];
        let w = p.weights.data();
        for o in 0..ws.n {
            let g_ch = &grad_out.data()[gs.index(n, o, 0, 0)..gs.index(n, o, 0, 0) + oh * ow];
            gb[o] += g_ch.iter().sum::<f64>();
            for ci in 0..xs.c {
                let x_ch = &x.data()[xs.index(n, ci, 0, 0)..xs.index(n, ci, 0, 0) + xs.h * xs.w];
                let gx_ch = &mut gx[ci * xs.h * xs.w..(ci + 1) * xs.h * xs.w];
                let w_k = &w[ws.index(o, ci, 0, 0)..ws.index(o, ci, 0, 0) + ws.h * ws.w];
                let gw_k = &mut gw[ws.index(o, ci, 0, 0)..ws.index(o, ci, 0, 0) + ws.h * ws.w];
                for di in 0..ws.h {
                    let (i_lo, i_hi) = valid_range(xs.h, di, ph, s, oh);
                    for dj in 0..ws.w {
                        let (j_lo, j_hi) = valid_range(xs.w, dj, pw, s, ow);
                        if j_lo >= j_hi {
                            continue;
                        }
                        let wv = w_k[di * ws.w + dj];
                        let mut acc = 0.0;
                        for i in i_lo..i_hi {
                            let ii = i * s + di - ph;
                            let g_row = &g_ch[i * ow..i * ow + ow];
                            let mut xi = j_lo * s + dj - pw;
                            for j in j_lo..j_hi {
                                let g = g_row[j];
                                acc += x_ch[ii * xs.w + xi] * g;
                                gx_ch[ii * xs.w + xi] += wv * g;
                                xi += s;
                            }
                        }
                        gw_k[di * ws.w + dj] += acc;
                    }
                }
            }
        }
        (gx, gw, gb)
    };

    let parts: Vec<(Vec<f64>, Vec<f64>, Vec<f64>)> =
        if xs.n > 1 && xs.len() >= par::PAR_THRESHOLD {
            par::pool().install(|| (0..xs.n).into_par_iter().map(per_sample).collect())
        } else {
            (0..xs.n).map(per_sample).collect()
        };

    let mut grad_x = Tensor::zeros(xs.n, xs.c, xs.h, xs.w)?;
    let mut grad_weights = p.weights.zeros_like();
    let mut grad_bias = vec![0.0; ws.n];
    for (n, (gx, gw, gb)) in parts.into_iter().enumerate() {
        let base = xs.index(n, 0, 0, 0);
        grad_x.data_mut()[base..base + gx.len()].copy_from_slice(&gx);
        for (dst, src) in grad_weights.data_mut().iter_mut().zip(&gw) {
            *dst += src;
        }
        for (dst, src) in grad_bias.iter_mut().zip(&gb) {
            *dst += src;
        }
    }
    Ok(ConvGrads {
        grad_x,
        grad_weights,
        grad_bias: p.bias.as_ref().map(|_| grad_bias),
    })
}
