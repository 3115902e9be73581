//! Depthwise convolution: one small coefficient window per channel, shared
//! across all spatial positions of that channel. Stride is fixed at 1; this
//! is the sliding-window dot product behind the funnel condition.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::par;
use crate::tensor::Tensor;

/// Per-channel window weights plus zero padding. Weights are shaped
/// `(1, c, kh, kw)`; there is no bias term (a following norm's beta covers
/// that role).
#[derive(Debug, Clone, PartialEq)]
pub struct DepthwiseConvParams {
    pub weights: Tensor,
    pub padding: (usize, usize),
}

impl DepthwiseConvParams {
    pub fn new(weights: Tensor, padding: (usize, usize)) -> Result<Self> {
        if weights.shape().n != 1 {
            return Err(Error::InvalidShape(format!(
                "depthwise weights must be shaped (1,c,kh,kw), got {}",
                weights.shape()
            )));
        }
        Ok(DepthwiseConvParams { weights, padding })
    }

    /// Same-size padding for an odd window.
    pub fn same(weights: Tensor) -> Result<Self> {
        let s = weights.shape();
        if s.h % 2 == 0 || s.w % 2 == 0 {
            return Err(Error::Config(format!(
                "same-padding requires odd window, got {}x{}",
                s.h, s.w
            )));
        }
        let pad = ((s.h - 1) / 2, (s.w - 1) / 2);
        Self::new(weights, pad)
    }

    pub fn channels(&self) -> usize {
        self.weights.shape().c
    }

    pub fn kh(&self) -> usize {
        self.weights.shape().h
    }

    pub fn kw(&self) -> usize {
        self.weights.shape().w
    }
}

fn output_hw(x: &Tensor, p: &DepthwiseConvParams) -> Result<(usize, usize)> {
    let xs = x.shape();
    let (ph, pw) = p.padding;
    let (kh, kw) = (p.kh(), p.kw());
    if xs.c != p.channels() {
        return Err(Error::ShapeMismatch(format!(
            "depthwise conv: input has {} channels, weights have {}",
            xs.c,
            p.channels()
        )));
    }
    if xs.h + 2 * ph < kh || xs.w + 2 * pw < kw {
        return Err(Error::InvalidShape(format!(
            "window {kh}x{kw} does not fit padded input {}x{}",
            xs.h + 2 * ph,
            xs.w + 2 * pw
        )));
    }
    Ok((xs.h + 2 * ph - kh + 1, xs.w + 2 * pw - kw + 1))
}

/// out[n,c,i,j] = sum over the window of x (zero padded) times the channel's
/// window weights. Spatial size is preserved under same-padding.
pub fn depthwise_conv_forward(x: &Tensor, p: &DepthwiseConvParams) -> Result<Tensor> {
    let (oh, ow) = output_hw(x, p)?;
    let xs = x.shape();
    let mut out = Tensor::zeros(xs.n, xs.c, oh, ow)?;

    let plane = xs.c * oh * ow;
    let run = |(n, out_chunk): (usize, &mut [f64])| {
        forward_one(x, p, n, out_chunk, oh, ow);
    };
    if xs.n * plane >= par::PAR_THRESHOLD && xs.n > 1 {
        par::pool().install(|| {
            out.data_mut().par_chunks_mut(plane).enumerate().for_each(run);
        });
    } else {
        out.data_mut().chunks_mut(plane).enumerate().for_each(run);
    }
    Ok(out)
}

fn forward_one(
    x: &Tensor,
    p: &DepthwiseConvParams,
    n: usize,
    out_chunk: &mut [f64],
    oh: usize,
    ow: usize,
) {
    let xs = x.shape();
    let (ph, pw) = p.padding;
    let (kh, kw) = (p.kh(), p.kw());
    let w = p.weights.data();
    for c in 0..xs.c {
        let x_ch = &x.data()[xs.index(n, c, 0, 0)..xs.index(n, c, 0, 0) + xs.h * xs.w];
        let o_ch = &mut out_chunk[c * oh * ow..(c + 1) * oh * ow];
        let w_ch = &w[c * kh * kw..(c + 1) * kh * kw];
        for (di, w_row) in w_ch.chunks_exact(kw).enumerate() {
            // valid output rows for this window row: 0 <= i + di - ph < h
            let i_lo = ph.saturating_sub(di);
            let i_hi = (xs.h + ph - di).min(oh);
            for (dj, &wv) in w_row.iter().enumerate() {
                if wv == 0.0 {
                    continue;
                }
                let j_lo = pw.saturating_sub(dj);
                let j_hi = (xs.w + pw - dj).min(ow);
                let col_off = dj as isize - pw as isize;
                for i in i_lo..i_hi {
                    let ii = (i + di - ph) * xs.w;
                    let o_row = &mut o_ch[i * ow..i * ow + ow];
                    for j in j_lo..j_hi {
                        o_row[j] += wv * x_ch[ii + (j as isize + col_off) as usize];
                    }
                }
            }
        }
    }
}

/// Exact adjoints of the forward linear map: gradient w.r.t. the input and
/// w.r.t. the per-channel window weights.
pub fn depthwise_conv_backward(
    x: &Tensor,
    p: &DepthwiseConvParams,
    grad_out: &Tensor,
) -> Result<(Tensor, Tensor)> {
    let (oh, ow) = output_hw(x, p)?;
    let xs = x.shape();
    let gs = grad_out.shape();
    if gs.n != xs.n || gs.c != xs.c || gs.h != oh || gs.w != ow {
        return Err(Error::ShapeMismatch(format!(
            "depthwise backward: grad_out {} does not match output ({},{},{},{})",
            gs, xs.n, xs.c, oh, ow
        )));
    }

    let (ph, pw) = p.padding;
    let (kh, kw) = (p.kh(), p.kw());
    let per_sample = |n: usize| -> (Vec<f64>, Vec<f64>) {
        let mut gx = vec![0.0; xs.c * xs.h * xs.w];
        let mut gw = vec![0.0; xs.c * kh * kw];
        let w = p.weights.data();
        for c in 0..xs.c {
            let x_ch = &x.data()[xs.index(n, c, 0, 0)..xs.index(n, c, 0, 0) + xs.h * xs.w];
            let g_ch =
                &grad_out.data()[gs.index(n, c, 0, 0)..gs.index(n, c, 0, 0) + oh * ow];
            let gx_ch = &mut gx[c * xs.h * xs.w..(c + 1) * xs.h * xs.w];
            let gw_ch = &mut gw[c * kh * kw..(c + 1) * kh * kw];
            let w_ch = &w[c * kh * kw..(c + 1) * kh * kw];
            for di in 0..kh {
                let i_lo = ph.saturating_sub(di);
                let i_hi = (xs.h + ph - di).min(oh);
                for dj in 0..kw {
                    let j_lo = pw.saturating_sub(dj);
                    let j_hi = (xs.w + pw - dj).min(ow);
                    if j_lo >= j_hi {
                        continue;
                    }
                    let wv = w_ch[di * kw + dj];
                    let col_off = dj as isize - pw as isize;
                    let mut acc = 0.0;
                    for i in i_lo..i_hi {
                        let ii = (i + di - ph) * xs.w;
                        let g_row = &g_ch[i * ow..i * ow + ow];
                        for j in j_lo..j_hi {
                            let xi = ii + (j as isize + col_off) as usize;
                            let g = g_row[j];
                            acc += x_ch[xi] * g;
                            gx_ch[xi] += wv * g;
                        }
                    }
                    gw_ch[di * kw + dj] += acc;
                }
            }
        }
        (gx, gw)
    };

    let parts: Vec<(Vec<f64>, Vec<f64>)> = if xs.len() >= par::PAR_THRESHOLD && xs.n > 1 {
        par::pool().install(|| (0..xs.n).into_par_iter().map(per_sample).collect())
    } else {
        (0..xs.n).map(per_sample).collect()
    };

    let mut grad_x = Tensor::zeros(xs.n, xs.c, xs.h, xs.w)?;
    let mut grad_w = p.weights.zeros_like();
    for (n, (gx, gw)) in parts.into_iter().enumerate() {
        let base = xs.index(n, 0, 0, 0);
        grad_x.data_mut()[base..base + gx.len()].copy_from_slice(&gx);
        for (dst, src) in grad_w.data_mut().iter_mut().zip(&gw) {
            *dst += src;
        }
    }
    Ok((grad_x, grad_w))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    /// Brute-force sliding-window sum, written independently of the kernel.
    pub(crate) fn naive_depthwise(x: &Tensor, p: &DepthwiseConvParams) -> Tensor {
        let xs = x.shape();
        let (ph, pw) = p.padding;
        let (kh, kw) = (p.kh(), p.kw());
        let oh = xs.h + 2 * ph - kh + 1;
        let ow = xs.w + 2 * pw - kw + 1;
        let mut out = Tensor::zeros(xs.n, xs.c, oh, ow).unwrap();
        for n in 0..xs.n {
            for c in 0..xs.c {
                for i in 0..oh {
                    for j in 0..ow {
                        let mut acc = 0.0;
                        for di in 0..kh {
                            for dj in 0..kw {
                                let ii = i as isize + di as isize - ph as isize;
                                let jj = j as isize + dj as isize - pw as isize;
                                if ii >= 0 && jj >= 0 && (ii as usize) < xs.h && (jj as usize) < xs.w
                                {
                                    acc += x.at(n, c, ii as usize, jj as usize)
                                        * p.weights.at(0, c, di, dj);
                                }
                            }
                        }
                        out.set(n, c, i, j, acc);
                    }
                }
            }
        }
        out
    }

    fn integer_tensor(n: usize, c: usize, h: usize, w: usize, rng: &mut Rng) -> Tensor {
        let data = (0..n * c * h * w)
            .map(|_| (rng.next_below(17) as f64) - 8.0)
            .collect();
        Tensor::from_vec(n, c, h, w, data).unwrap()
    }

    #[test]
    fn zero_weights_annihilate() {
        let mut rng = Rng::new(1);
        let x = Tensor::gaussian(2, 3, 5, 5, 0.0, 1.0, &mut rng).unwrap();
        let p = DepthwiseConvParams::same(Tensor::zeros(1, 3, 3, 3).unwrap()).unwrap();
        let y = depthwise_conv_forward(&x, &p).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn one_by_one_window_scales_per_channel() {
        let mut rng = Rng::new(2);
        let x = Tensor::gaussian(1, 2, 4, 4, 0.0, 1.0, &mut rng).unwrap();
        let w = Tensor::from_vec(1, 2, 1, 1, vec![0.25, -2.0]).unwrap();
        let p = DepthwiseConvParams::same(w).unwrap();
        let y = depthwise_conv_forward(&x, &p).unwrap();
        for c in 0..2 {
            let scale = if c == 0 { 0.25 } else { -2.0 };
            for i in 0..4 {
                for j in 0..4 {
                    assert_eq!(y.at(0, c, i, j).to_bits(), (x.at(0, c, i, j) * scale).to_bits());
                }
            }
        }
    }

    #[test]
    fn all_ones_window_center_sums_whole_image() {
        let x = Tensor::from_vec(
            1,
            1,
            3,
            3,
            vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0],
        )
        .unwrap();
        let p = DepthwiseConvParams::same(Tensor::filled(1, 1, 3, 3, 1.0).unwrap()).unwrap();
        let y = depthwise_conv_forward(&x, &p).unwrap();
        assert_eq!(y.at(0, 0, 1, 1), 45.0);
        // the full map matches the brute-force oracle
        assert_eq!(y, naive_depthwise(&x, &p));
    }

    #[test]
    fn matches_naive_oracle_on_integer_tensors() {
        let mut rng = Rng::new(3);
        for &(kh, kw) in &[(1, 1), (3, 3), (1, 3), (3, 1), (5, 5)] {
            let x = integer_tensor(2, 3, 6, 7, &mut rng);
            let w = integer_tensor(1, 3, kh, kw, &mut rng);
            let p = DepthwiseConvParams::same(w).unwrap();
            let got = depthwise_conv_forward(&x, &p).unwrap();
            let want = naive_depthwise(&x, &p);
            assert_eq!(got, want, "window {kh}x{kw}");
        }
    }

    #[test]
    fn channel_mismatch_rejected() {
        let x = Tensor::zeros(1, 2, 4, 4).unwrap();
        let p = DepthwiseConvParams::same(Tensor::zeros(1, 3, 3, 3).unwrap()).unwrap();
        assert!(matches!(depthwise_conv_forward(&x, &p), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn zero_grad_out_gives_zero_grads() {
        let mut rng = Rng::new(4);
        let x = Tensor::gaussian(1, 2, 4, 4, 0.0, 1.0, &mut rng).unwrap();
        let w = Tensor::gaussian(1, 2, 3, 3, 0.0, 0.5, &mut rng).unwrap();
        let p = DepthwiseConvParams::same(w).unwrap();
        let g = Tensor::zeros(1, 2, 4, 4).unwrap();
        let (gx, gw) = depthwise_conv_backward(&x, &p, &g).unwrap();
        assert!(gx.data().iter().all(|&v| v == 0.0));
        assert!(gw.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn one_by_one_grad_weights_is_channel_dot() {
        let mut rng = Rng::new(5);
        let x = integer_tensor(2, 2, 3, 3, &mut rng);
        let g = integer_tensor(2, 2, 3, 3, &mut rng);
        let p = DepthwiseConvParams::same(Tensor::filled(1, 2, 1, 1, 0.5).unwrap()).unwrap();
        let (_, gw) = depthwise_conv_backward(&x, &p, &g).unwrap();
        for c in 0..2 {
            let mut want = 0.0;
            for n in 0..2 {
                for i in 0..3 {
                    for j in 0..3 {
                        want += x.at(n, c, i, j) * g.at(n, c, i, j);
                    }
                }
            }
            assert_eq!(gw.at(0, c, 0, 0), want);
        }
    }

    #[test]
    fn adjoint_identity_dot_product() {
        let mut rng = Rng::new(6);
        let x = Tensor::gaussian(2, 3, 5, 5, 0.0, 1.0, &mut rng).unwrap();
        let w = Tensor::gaussian(1, 3, 3, 3, 0.0, 0.5, &mut rng).unwrap();
        let p = DepthwiseConvParams::same(w).unwrap();
        let u = Tensor::gaussian(2, 3, 5, 5, 0.0, 1.0, &mut rng).unwrap();

        let y = depthwise_conv_forward(&x, &p).unwrap();
        let (gx, gw) = depthwise_conv_backward(&x, &p, &u).unwrap();

        let lhs = y.dot(&u).unwrap();
        let rhs_x = x.dot(&gx).unwrap();
        let rhs_w = p.weights.dot(&gw).unwrap();
        assert!((lhs - rhs_x).abs() <= 1e-9 * lhs.abs().max(1.0), "{lhs} vs {rhs_x}");
        assert!((lhs - rhs_w).abs() <= 1e-9 * lhs.abs().max(1.0), "{lhs} vs {rhs_w}");
    }

    #[test]
    fn linearity_of_forward() {
        let mut rng = Rng::new(7);
        let x = Tensor::gaussian(1, 2, 4, 4, 0.0, 1.0, &mut rng).unwrap();
        let y = Tensor::gaussian(1, 2, 4, 4, 0.0, 1.0, &mut rng).unwrap();
        let w = Tensor::gaussian(1, 2, 3, 3, 0.0, 0.5, &mut rng).unwrap();
        let p = DepthwiseConvParams::same(w).unwrap();
        let (alpha, beta) = (1.7, -0.4);

        let combo = x.mul_scalar(alpha).add(&y.mul_scalar(beta)).unwrap();
        let lhs = depthwise_conv_forward(&combo, &p).unwrap();
        let rhs = depthwise_conv_forward(&x, &p)
            .unwrap()
            .mul_scalar(alpha)
            .add(&depthwise_conv_forward(&y, &p).unwrap().mul_scalar(beta))
            .unwrap();
        for (a, b) in lhs.data().iter().zip(rhs.data()) {
            assert!((a - b).abs() <= 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn same_padding_preserves_shape_for_odd_windows() {
        let x = Tensor::zeros(1, 1, 6, 9).unwrap();
        for &(kh, kw) in &[(1, 1), (3, 3), (5, 5), (1, 3), (3, 1), (5, 1), (1, 7)] {
            let p = DepthwiseConvParams::same(Tensor::zeros(1, 1, kh, kw).unwrap()).unwrap();
            let y = depthwise_conv_forward(&x, &p).unwrap();
            assert_eq!(y.shape(), x.shape(), "window {kh}x{kw}");
        }
    }
}
