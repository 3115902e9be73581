//! Stride-1 same-size window pooling for the parameter-free funnel
//! conditions, plus global average pooling for classifier heads.
//!
//! Border windows use only in-bounds taps: the average divides by the valid
//! tap count and the max ignores the padding ring entirely, so per-window
//! max >= per-window mean holds everywhere.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

fn check_window(kh: usize, kw: usize) -> Result<(usize, usize)> {
    if kh % 2 == 0 || kw % 2 == 0 || kh == 0 || kw == 0 {
        return Err(Error::Config(format!("window must be odd, got {kh}x{kw}")));
    }
    Ok(((kh - 1) / 2, (kw - 1) / 2))
}

#[inline]
fn tap_range(center: usize, radius: usize, extent: usize) -> (usize, usize) {
    (center.saturating_sub(radius), (center + radius + 1).min(extent))
}

/// Per-window maximum over valid taps; stride 1, output size equals input.
pub fn window_maxpool(x: &Tensor, kh: usize, kw: usize) -> Result<Tensor> {
    let (rh, rw) = check_window(kh, kw)?;
    let xs = x.shape();
    let mut out = x.zeros_like();
    for n in 0..xs.n {
        for c in 0..xs.c {
            for i in 0..xs.h {
                let (i0, i1) = tap_range(i, rh, xs.h);
                for j in 0..xs.w {
                    let (j0, j1) = tap_range(j, rw, xs.w);
                    let mut best = f64::NEG_INFINITY;
                    for ii in i0..i1 {
                        for jj in j0..j1 {
                            let v = x.at(n, c, ii, jj);
                            if v > best {
                                best = v;
                            }
                        }
                    }
                    out.set(n, c, i, j, best);
                }
            }
        }
    }
    Ok(out)
}

/// Gradient of `window_maxpool`: each output routes its gradient to the
/// first maximal tap in row-major scan order (the same tie rule every run).
pub fn window_maxpool_backward(x: &Tensor, kh: usize, kw: usize, grad_out: &Tensor) -> Result<Tensor> {
    let (rh, rw) = check_window(kh, kw)?;
    let xs = x.shape();
    if grad_out.shape() != xs {
        return Err(Error::ShapeMismatch(format!(
            "maxpool backward: grad_out {} vs input {}",
            grad_out.shape(),
            xs
        )));
    }
    let mut gx = x.zeros_like();
    for n in 0..xs.n {
        for c in 0..xs.c {
            for i in 0..xs.h {
                let (i0, i1) = tap_range(i, rh, xs.h);
                for j in 0..xs.w {
                    let (j0, j1) = tap_range(j, rw, xs.w);
                    let mut best = f64::NEG_INFINITY;
                    let mut arg = (i0, j0);
                    for ii in i0..i1 {
                        for jj in j0..j1 {
                            let v = x.at(n, c, ii, jj);
                            if v > best {
                                best = v;
                                arg = (ii, jj);
                            }
                        }
                    }
                    let idx = xs.index(n, c, arg.0, arg.1);
                    gx.data_mut()[idx] += grad_out.at(n, c, i, j);
                }
            }
        }
    }
    Ok(gx)
}

/// Per-window mean over valid taps (border windows divide by their actual
/// tap count); stride 1, output size equals input.
pub fn window_avgpool(x: &Tensor, kh: usize, kw: usize) -> Result<Tensor> {
    let (rh, rw) = check_window(kh, kw)?;
    let xs = x.shape();
    let mut out = x.zeros_like();
    for n in 0..xs.n {
        for c in 0..xs.c {
            for i in 0..xs.h {
                let (i0, i1) = tap_range(i, rh, xs.h);
                for j in 0..xs.w {
                    let (j0, j1) = tap_range(j, rw, xs.w);
                    let mut acc = 0.0;
                    for ii in i0..i1 {
                        for jj in j0..j1 {
                            acc += x.at(n, c, ii, jj);
                        }
                    }
                    out.set(n, c, i, j, acc / ((i1 - i0) * (j1 - j0)) as f64);
                }
            }
        }
    }
    Ok(out)
}

/// Gradient of `window_avgpool`: each output spreads its gradient uniformly
/// over the valid taps of its window.
pub fn window_avgpool_backward(x: &Tensor, kh: usize, kw: usize, grad_out: &Tensor) -> Result<Tensor> {
    let (rh, rw) = check_window(kh, kw)?;
    let xs = x.shape();
    if grad_out.shape() != xs {
        return Err(Error::ShapeMismatch(format!(
            "avgpool backward: grad_out {} vs input {}",
            grad_out.shape(),
            xs
        )));
    }
    let mut gx = x.zeros_like();
    for n in 0..xs.n {
        for c in 0..xs.c {
            for i in 0..xs.h {
                let (i0, i1) = tap_range(i, rh, xs.h);
                for j in 0..xs.w {
                    let (j0, j1) = tap_range(j, rw, xs.w);
                    let share = grad_out.at(n, c, i, j) / ((i1 - i0) * (j1 - j0)) as f64;
                    for ii in i0..i1 {
                        for jj in j0..j1 {
                            let idx = xs.index(n, c, ii, jj);
                            gx.data_mut()[idx] += share;
                        }
                    }
                }
            }
        }
    }
    Ok(gx)
}

/// Mean over each (n, c) plane; output is (n, c, 1, 1).
pub fn global_avgpool(x: &Tensor) -> Result<Tensor> {
    let xs = x.shape();
    let hw = (xs.h * xs.w) as f64;
    let mut out = Tensor::zeros(xs.n, xs.c, 1, 1)?;
    for n in 0..xs.n {
        for c in 0..xs.c {
            let base = xs.index(n, c, 0, 0);
            let s: f64 = x.data()[base..base + xs.h * xs.w].iter().sum();
            out.set(n, c, 0, 0, s / hw);
        }
    }
    Ok(out)
}

pub fn global_avgpool_backward(x: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
    let xs = x.shape();
    let gs = grad_out.shape();
    if gs.n != xs.n || gs.c != xs.c || gs.h != 1 || gs.w != 1 {
        return Err(Error::ShapeMismatch(format!(
            "global avgpool backward: grad_out {gs} vs expected ({},{},1,1)",
            xs.n, xs.c
        )));
    }
    let hw = (xs.h * xs.w) as f64;
    let mut gx = x.zeros_like();
    for n in 0..xs.n {
        for c in 0..xs.c {
            let share = grad_out.at(n, c, 0, 0) / hw;
            let base = xs.index(n, c, 0, 0);
            gx.data_mut()[base..base + xs.h * xs.w].fill(share);
        }
    }
    Ok(gx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    #[test]
    fn constant_input_passes_through_both_pools() {
        let x = Tensor::filled(1, 2, 4, 5, 3.5).unwrap();
        assert_eq!(window_maxpool(&x, 3, 3).unwrap(), x);
        assert_eq!(window_avgpool(&x, 3, 3).unwrap(), x);
    }

    #[test]
    fn maxpool_small_image() {
        let x = Tensor::from_vec(1, 1, 2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let y = window_maxpool(&x, 3, 3).unwrap();
        assert_eq!(y.data(), &[4.0, 4.0, 4.0, 4.0]);
    }

    #[test]
    fn avgpool_center_of_three_by_three() {
        let x = Tensor::from_vec(
            1,
            1,
            3,
            3,
            vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0],
        )
        .unwrap();
        let y = window_avgpool(&x, 3, 3).unwrap();
        assert_eq!(y.at(0, 0, 1, 1), 5.0);
        // corner window sees only the 2x2 in-bounds taps
        assert_eq!(y.at(0, 0, 0, 0), (1.0 + 2.0 + 4.0 + 5.0) / 4.0);
    }

    #[test]
    fn even_window_rejected() {
        let x = Tensor::zeros(1, 1, 4, 4).unwrap();
        assert!(matches!(window_maxpool(&x, 2, 3), Err(Error::Config(_))));
        assert!(matches!(window_avgpool(&x, 3, 4), Err(Error::Config(_))));
    }

    #[test]
    fn max_dominates_avg_everywhere() {
        let mut rng = Rng::new(1);
        for _ in 0..20 {
            let x = Tensor::gaussian(1, 2, 6, 6, 0.0, 2.0, &mut rng).unwrap();
            let mx = window_maxpool(&x, 3, 3).unwrap();
            let av = window_avgpool(&x, 3, 3).unwrap();
            for (m, a) in mx.data().iter().zip(av.data()) {
                assert!(m >= a);
            }
        }
    }

    #[test]
    fn avgpool_backward_is_exact_adjoint() {
        let mut rng = Rng::new(2);
        let x = Tensor::gaussian(2, 2, 4, 4, 0.0, 1.0, &mut rng).unwrap();
        let u = Tensor::gaussian(2, 2, 4, 4, 0.0, 1.0, &mut rng).unwrap();
        let y = window_avgpool(&x, 3, 3).unwrap();
        let gx = window_avgpool_backward(&x, 3, 3, &u).unwrap();
        let lhs = y.dot(&u).unwrap();
        let rhs = x.dot(&gx).unwrap();
        assert!((lhs - rhs).abs() <= 1e-12 * lhs.abs().max(1.0));
    }

    #[test]
    fn maxpool_backward_routes_to_argmax() {
        let x = Tensor::from_vec(1, 1, 2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let g = Tensor::filled(1, 1, 2, 2, 1.0).unwrap();
        let gx = window_maxpool_backward(&x, 3, 3, &g).unwrap();
        // every window selects the value 4 at (1,1)
        assert_eq!(gx.data(), &[0.0, 0.0, 0.0, 4.0]);
    }

    #[test]
    fn global_avgpool_and_backward() {
        let x = Tensor::from_vec(1, 2, 2, 2, vec![1.0, 2.0, 3.0, 4.0, 10.0, 10.0, 10.0, 10.0])
            .unwrap();
        let y = global_avgpool(&x).unwrap();
        assert_eq!(y.data(), &[2.5, 10.0]);
        let g = Tensor::from_vec(1, 2, 1, 1, vec![4.0, 8.0]).unwrap();
        let gx = global_avgpool_backward(&x, &g).unwrap();
        assert_eq!(gx.data(), &[1.0, 1.0, 1.0, 1.0, 2.0, 2.0, 2.0, 2.0]);
    }
}
