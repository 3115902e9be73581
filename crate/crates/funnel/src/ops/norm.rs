//! Batch / layer / instance / group normalization with shared machinery.
//!
//! Layer and instance norm are group norm with one group and with one group
//! per channel; batch norm is the only kind with running statistics and a
//! train/eval distinction. The affine transform is always per-channel.

use crate::error::{Error, Result};
use crate::ops::Mode;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormKind {
    None,
    Batch,
    Layer,
    Instance,
    Group(usize),
}

impl NormKind {
    pub fn label(&self) -> String {
        match self {
            NormKind::None => "none".into(),
            NormKind::Batch => "bn".into(),
            NormKind::Layer => "ln".into(),
            NormKind::Instance => "in".into(),
            NormKind::Group(g) => format!("gn{g}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NormParams {
    pub kind: NormKind,
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    /// Batch norm only; ignored by the other kinds.
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub eps: f64,
    pub momentum: f64,
    /// Learnable affine enabled. When false gamma/beta stay fixed at 1/0.
    pub affine: bool,
}

impl NormParams {
    /// Conventional defaults: eps 1e-5, momentum 0.1, affine on.
    pub fn new(kind: NormKind, channels: usize) -> NormParams {
        NormParams {
            kind,
            gamma: vec![1.0; channels],
            beta: vec![0.0; channels],
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            eps: 1e-5,
            momentum: 0.1,
            affine: true,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    fn validate(&self, input_channels: usize) -> Result<usize> {
        let c = self.channels();
        if self.beta.len() != c || self.running_mean.len() != c || self.running_var.len() != c {
            return Err(Error::Config(
                "norm parameter vectors must all have the channel length".into(),
            ));
        }
        if input_channels != c {
            return Err(Error::ShapeMismatch(format!(
                "norm expects {c} channels, input has {input_channels}"
            )));
        }
        if !(self.eps > 0.0) {
            return Err(Error::Config(format!("eps must be > 0, got {}", self.eps)));
        }
        if matches!(self.kind, NormKind::Batch) && !(self.momentum > 0.0 && self.momentum < 1.0) {
            return Err(Error::Config(format!(
                "momentum must be in (0,1), got {}",
                self.momentum
            )));
        }
        if self.running_var.iter().any(|&v| v < 0.0) {
            return Err(Error::Config("running_var entries must be >= 0".into()));
        }
        let groups = match self.kind {
            NormKind::Group(g) => {
                if g == 0 || c % g != 0 {
                    return Err(Error::Config(format!(
                        "group norm needs channels divisible by groups, got c={c} g={g}"
                    )));
                }
                g
            }
            NormKind::Layer => 1,
            NormKind::Instance => c,
            _ => 1,
        };
        Ok(groups)
    }
}

/// Saved forward intermediates for the backward pass.
#[derive(Debug, Clone)]
pub struct NormCache {
    kind: NormKind,
    mode: Mode,
    /// Normalized values before the affine transform.
    xhat: Tensor,
    /// One inverse standard deviation per statistics group.
    inv_std: Vec<f64>,
    /// Statistics-group id for each (n, c) plane; empty for None/eval-batch.
    group_of_plane: Vec<usize>,
    /// Element count per statistics group.
    group_len: usize,
}

impl NormCache {
    /// Largest inverse standard deviation across statistics groups; 1 when
    /// the cache carries no statistics.
    pub(crate) fn inv_std_max(&self) -> f64 {
        self.inv_std.iter().fold(1.0_f64, |a, &v| a.max(v))
    }
}

pub struct NormOutput {
    pub y: Tensor,
    pub cache: NormCache,
    /// Updated (running_mean, running_var); train-mode batch norm only.
    pub running: Option<(Vec<f64>, Vec<f64>)>,
}

pub struct NormGrads {
    pub grad_x: Tensor,
    pub grad_gamma: Vec<f64>,
    pub grad_beta: Vec<f64>,
}

/// Statistics-group id for plane (n, c). Batch norm groups by channel; the
/// group-norm family groups by (sample, channel block).
fn plane_groups(kind: NormKind, n: usize, c: usize, groups: usize) -> Vec<usize> {
    let mut out = vec![0usize; n * c];
    for ni in 0..n {
        for ci in 0..c {
            out[ni * c + ci] = match kind {
                NormKind::Batch => ci,
                _ => ni * groups + ci / (c / groups),
            };
        }
    }
    out
}

pub fn norm_forward(x: &Tensor, p: &NormParams, mode: Mode) -> Result<NormOutput> {
    let xs = x.shape();
    if matches!(p.kind, NormKind::None) {
        return Ok(NormOutput {
            y: x.clone(),
            cache: NormCache {
                kind: p.kind,
                mode,
                xhat: x.zeros_like(),
                inv_std: Vec::new(),
                group_of_plane: Vec::new(),
                group_len: 0,
            },
            running: None,
        });
    }
    let groups = p.validate(xs.c)?;
    let hw = xs.h * xs.w;

    // Eval-mode batch norm: a fixed per-channel affine map from running stats.
    if matches!(p.kind, NormKind::Batch) && mode == Mode::Eval {
        let inv_std: Vec<f64> =
            p.running_var.iter().map(|&v| 1.0 / (v + p.eps).sqrt()).collect();
        let mut xhat = x.zeros_like();
        let mut y = x.zeros_like();
        for n in 0..xs.n {
            for c in 0..xs.c {
                let base = xs.index(n, c, 0, 0);
                for k in 0..hw {
                    let xh = (x.data()[base + k] - p.running_mean[c]) * inv_std[c];
                    xhat.data_mut()[base + k] = xh;
                    y.data_mut()[base + k] = p.gamma[c] * xh + p.beta[c];
                }
            }
        }
        return Ok(NormOutput {
            y,
            cache: NormCache {
                kind: p.kind,
                mode,
                xhat,
                inv_std,
                group_of_plane: Vec::new(),
                group_len: 0,
            },
            running: None,
        });
    }

    // Statistics over groups of (n, c) planes.
    let num_groups = match p.kind {
        NormKind::Batch => xs.c,
        _ => xs.n * groups,
    };
    let group_of_plane = plane_groups(p.kind, xs.n, xs.c, groups);
    let group_len = match p.kind {
        NormKind::Batch => xs.n * hw,
        _ => (xs.c / groups) * hw,
    };

    let mut mean = vec![0.0; num_groups];
    for n in 0..xs.n {
        for c in 0..xs.c {
            let g = group_of_plane[n * xs.c + c];
            let base = xs.index(n, c, 0, 0);
            mean[g] += x.data()[base..base + hw].iter().sum::<f64>();
        }
    }
    for m in mean.iter_mut() {
        *m /= group_len as f64;
    }
    let mut var = vec![0.0; num_groups];
    for n in 0..xs.n {
        for c in 0..xs.c {
            let g = group_of_plane[n * xs.c + c];
            let base = xs.index(n, c, 0, 0);
            let mu = mean[g];
            var[g] += x.data()[base..base + hw].iter().map(|&v| (v - mu) * (v - mu)).sum::<f64>();
        }
    }
    for v in var.iter_mut() {
        *v /= group_len as f64;
    }
    let inv_std: Vec<f64> = var.iter().map(|&v| 1.0 / (v + p.eps).sqrt()).collect();

    let mut xhat = x.zeros_like();
    let mut y = x.zeros_like();
    for n in 0..xs.n {
        for c in 0..xs.c {
            let g = group_of_plane[n * xs.c + c];
            let base = xs.index(n, c, 0, 0);
            let (mu, is) = (mean[g], inv_std[g]);
            let (ga, be) = (p.gamma[c], p.beta[c]);
            for k in 0..hw {
                let xh = (x.data()[base + k] - mu) * is;
                xhat.data_mut()[base + k] = xh;
                y.data_mut()[base + k] = ga * xh + be;
            }
        }
    }

    // Running statistics update: biased batch variance normalizes, the
    // unbiased estimate feeds the running buffer.
    let running = if matches!(p.kind, NormKind::Batch) && mode == Mode::Train {
        let m = group_len as f64;
        let correction = if group_len > 1 { m / (m - 1.0) } else { 1.0 };
        let rm: Vec<f64> = p
            .running_mean
            .iter()
            .zip(&mean)
            .map(|(&r, &b)| (1.0 - p.momentum) * r + p.momentum * b)
            .collect();
        let rv: Vec<f64> = p
            .running_var
            .iter()
            .zip(&var)
            .map(|(&r, &b)| (1.0 - p.momentum) * r + p.momentum * b * correction)
            .collect();
        Some((rm, rv))
    } else {
        None
    };

    Ok(NormOutput {
        y,
        cache: NormCache { kind: p.kind, mode, xhat, inv_std, group_of_plane, group_len },
        running,
    })
}

/// Exact adjoint of `norm_forward` in the cached mode.
pub fn norm_backward(p: &NormParams, cache: &NormCache, grad_out: &Tensor) -> Result<NormGrads> {
    let xs = grad_out.shape();
    if matches!(cache.kind, NormKind::None) {
        return Ok(NormGrads {
            grad_x: grad_out.clone(),
            grad_gamma: vec![0.0; p.channels()],
            grad_beta: vec![0.0; p.channels()],
        });
    }
    if cache.xhat.shape() != xs {
        return Err(Error::ShapeMismatch(format!(
            "norm backward: grad_out {} does not match cached forward {}",
            xs,
            cache.xhat.shape()
        )));
    }
    let hw = xs.h * xs.w;
    let mut grad_gamma = vec![0.0; xs.c];
    let mut grad_beta = vec![0.0; xs.c];
    for n in 0..xs.n {
        for c in 0..xs.c {
            let base = xs.index(n, c, 0, 0);
            for k in 0..hw {
                let g = grad_out.data()[base + k];
                grad_gamma[c] += g * cache.xhat.data()[base + k];
                grad_beta[c] += g;
            }
        }
    }

    let mut grad_x = grad_out.zeros_like();
    if matches!(cache.kind, NormKind::Batch) && cache.mode == Mode::Eval {
        for n in 0..xs.n {
            for c in 0..xs.c {
                let base = xs.index(n, c, 0, 0);
                let a = p.gamma[c] * cache.inv_std[c];
                for k in 0..hw {
                    grad_x.data_mut()[base + k] = grad_out.data()[base + k] * a;
                }
            }
        }
    } else {
        // Train-mode statistics: project out the per-group mean and the
        // xhat-direction component.
        let num_groups = cache.inv_std.len();
        let m = cache.group_len as f64;
        let mut s1 = vec![0.0; num_groups]; // sum of grad_xhat
        let mut s2 = vec![0.0; num_groups]; // sum of grad_xhat * xhat
        for n in 0..xs.n {
            for c in 0..xs.c {
                let g = cache.group_of_plane[n * xs.c + c];
                let base = xs.index(n, c, 0, 0);
                let ga = p.gamma[c];
                for k in 0..hw {
                    let gxh = grad_out.data()[base + k] * ga;
                    s1[g] += gxh;
                    s2[g] += gxh * cache.xhat.data()[base + k];
                }
            }
        }
        for n in 0..xs.n {
            for c in 0..xs.c {
                let g = cache.group_of_plane[n * xs.c + c];
                let base = xs.index(n, c, 0, 0);
                let ga = p.gamma[c];
                let is = cache.inv_std[g];
                let (m1, m2) = (s1[g] / m, s2[g] / m);
                for k in 0..hw {
                    let gxh = grad_out.data()[base + k] * ga;
                    let xh = cache.xhat.data()[base + k];
                    grad_x.data_mut()[base + k] = is * (gxh - m1 - xh * m2);
                }
            }
        }
    }

    if !p.affine {
        grad_gamma.fill(0.0);
        grad_beta.fill(0.0);
    }
    Ok(NormGrads { grad_x, grad_gamma, grad_beta })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn moments(vals: &[f64]) -> (f64, f64) {
        let m = vals.iter().sum::<f64>() / vals.len() as f64;
        let v = vals.iter().map(|&x| (x - m) * (x - m)).sum::<f64>() / vals.len() as f64;
        (m, v)
    }

    #[test]
    fn constant_input_train_bn_maps_to_beta() {
        let x = Tensor::filled(3, 2, 4, 4, 7.5).unwrap();
        let p = NormParams::new(NormKind::Batch, 2);
        let out = norm_forward(&x, &p, Mode::Train).unwrap();
        assert!(out.y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn none_is_identity_both_ways() {
        let mut rng = Rng::new(1);
        let x = Tensor::gaussian(2, 3, 3, 3, 0.0, 1.0, &mut rng).unwrap();
        let p = NormParams::new(NormKind::None, 3);
        let out = norm_forward(&x, &p, Mode::Train).unwrap();
        assert_eq!(out.y, x);
        let g = Tensor::gaussian(2, 3, 3, 3, 0.0, 1.0, &mut rng).unwrap();
        let grads = norm_backward(&p, &out.cache, &g).unwrap();
        assert_eq!(grads.grad_x, g);
    }

    #[test]
    fn train_bn_standardizes_per_channel() {
        let mut rng = Rng::new(2);
        let x = Tensor::gaussian(4, 2, 3, 3, 1.5, 2.0, &mut rng).unwrap();
        let mut p = NormParams::new(NormKind::Batch, 2);
        p.eps = 1e-12; // negligible eps so the variance target is exactly 1
        let out = norm_forward(&x, &p, Mode::Train).unwrap();
        let xs = x.shape();
        for c in 0..2 {
            let mut vals = Vec::new();
            for n in 0..xs.n {
                for i in 0..xs.h {
                    for j in 0..xs.w {
                        vals.push(out.y.at(n, c, i, j));
                    }
                }
            }
            let (m, v) = moments(&vals);
            assert!(m.abs() <= 1e-9, "channel {c} mean {m}");
            assert!((v - 1.0).abs() <= 1e-6, "channel {c} var {v}");
        }
    }

    #[test]
    fn train_bn_variance_with_default_eps_matches_formula() {
        let mut rng = Rng::new(3);
        let x = Tensor::gaussian(4, 1, 4, 4, 0.0, 1.3, &mut rng).unwrap();
        let p = NormParams::new(NormKind::Batch, 1);
        let out = norm_forward(&x, &p, Mode::Train).unwrap();
        let (_, batch_var) = moments(x.data());
        let (_, got) = moments(out.y.data());
        let want = batch_var / (batch_var + p.eps);
        assert!((got - want).abs() <= 1e-12, "{got} vs {want}");
    }

    #[test]
    fn layer_instance_group_standardize_their_groups() {
        let mut rng = Rng::new(4);
        let x = Tensor::gaussian(3, 4, 5, 5, -0.5, 1.7, &mut rng).unwrap();
        let xs = x.shape();

        // layer: per-sample moments over (c,h,w)
        let mut p = NormParams::new(NormKind::Layer, 4);
        p.eps = 1e-12;
        let out = norm_forward(&x, &p, Mode::Train).unwrap();
        for n in 0..xs.n {
            let base = xs.index(n, 0, 0, 0);
            let plane = xs.c * xs.h * xs.w;
            let (m, v) = moments(&out.y.data()[base..base + plane]);
            assert!(m.abs() <= 1e-9 && (v - 1.0).abs() <= 1e-6, "sample {n}: {m} {v}");
        }

        // instance: per (sample, channel)
        let mut p = NormParams::new(NormKind::Instance, 4);
        p.eps = 1e-12;
        let out = norm_forward(&x, &p, Mode::Train).unwrap();
        for n in 0..xs.n {
            for c in 0..xs.c {
                let base = xs.index(n, c, 0, 0);
                let (m, v) = moments(&out.y.data()[base..base + xs.h * xs.w]);
                assert!(m.abs() <= 1e-9 && (v - 1.0).abs() <= 1e-6);
            }
        }

        // group(2): channels {0,1} and {2,3} per sample
        let mut p = NormParams::new(NormKind::Group(2), 4);
        p.eps = 1e-12;
        let out = norm_forward(&x, &p, Mode::Train).unwrap();
        for n in 0..xs.n {
            for g in 0..2 {
                let mut vals = Vec::new();
                for c in (g * 2)..(g * 2 + 2) {
                    let base = xs.index(n, c, 0, 0);
                    vals.extend_from_slice(&out.y.data()[base..base + xs.h * xs.w]);
                }
                let (m, v) = moments(&vals);
                assert!(m.abs() <= 1e-9 && (v - 1.0).abs() <= 1e-6);
            }
        }
    }

    #[test]
    fn group_norm_indivisible_channels_rejected() {
        let x = Tensor::zeros(1, 6, 2, 2).unwrap();
        let p = NormParams::new(NormKind::Group(4), 6);
        assert!(matches!(norm_forward(&x, &p, Mode::Train), Err(Error::Config(_))));
    }

    #[test]
    fn eval_bn_is_affine_per_channel() {
        let mut rng = Rng::new(5);
        let x = Tensor::gaussian(2, 3, 4, 4, 0.0, 1.0, &mut rng).unwrap();
        let mut p = NormParams::new(NormKind::Batch, 3);
        p.running_mean = vec![0.3, -0.2, 1.0];
        p.running_var = vec![0.9, 2.0, 0.25];
        p.gamma = vec![1.5, 0.5, -1.0];
        p.beta = vec![0.1, 0.0, -0.4];
        let out = norm_forward(&x, &p, Mode::Eval).unwrap();
        let (alpha, beta_shift) = (1.8, -0.6);
        let x2 = x.mul_scalar(alpha).map(|v| v + beta_shift);
        let out2 = norm_forward(&x2, &p, Mode::Eval).unwrap();
        let xs = x.shape();
        for n in 0..xs.n {
            for c in 0..xs.c {
                // eval BN is y = A*x + B with A = gamma/sqrt(rv+eps), so
                // y(alpha*x + shift) = alpha*y(x) + A*shift + (1-alpha)*B
                let a = p.gamma[c] / (p.running_var[c] + p.eps).sqrt();
                let b = p.beta[c] - a * p.running_mean[c];
                for i in 0..xs.h {
                    for j in 0..xs.w {
                        let expect =
                            alpha * out.y.at(n, c, i, j) + a * beta_shift + (1.0 - alpha) * b;
                        assert!((out2.y.at(n, c, i, j) - expect).abs() <= 1e-9);
                    }
                }
            }
        }
    }

    #[test]
    fn running_stats_update_rule() {
        let mut rng = Rng::new(6);
        let x = Tensor::gaussian(8, 1, 4, 4, 2.0, 3.0, &mut rng).unwrap();
        let p = NormParams::new(NormKind::Batch, 1);
        let out = norm_forward(&x, &p, Mode::Train).unwrap();
        let (rm, rv) = out.running.unwrap();
        let (bm, bv) = moments(x.data());
        let m = x.len() as f64;
        assert!((rm[0] - 0.1 * bm).abs() <= 1e-12);
        assert!((rv[0] - (0.9 * 1.0 + 0.1 * bv * m / (m - 1.0))).abs() <= 1e-12);
    }

    #[test]
    fn zero_grad_out_zero_grads() {
        let mut rng = Rng::new(7);
        let x = Tensor::gaussian(2, 2, 3, 3, 0.0, 1.0, &mut rng).unwrap();
        let p = NormParams::new(NormKind::Batch, 2);
        let out = norm_forward(&x, &p, Mode::Train).unwrap();
        let grads = norm_backward(&p, &out.cache, &x.zeros_like()).unwrap();
        assert!(grads.grad_x.data().iter().all(|&v| v == 0.0));
        assert!(grads.grad_gamma.iter().all(|&v| v == 0.0));
        assert!(grads.grad_beta.iter().all(|&v| v == 0.0));
    }
}
