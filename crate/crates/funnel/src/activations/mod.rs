//! Activation functions: ReLU, PReLU, Swish, the funnel activation (FReLU)
//! and its ablation variants, each with a forward and an exact backward.
//!
//! Scalar activations are pure elementwise maps. The funnel variants carry
//! learnable state (window weights, norm affine) and a forward cache. Where
//! a max selection ties, the gradient routes to the identity branch.

mod funnel;

pub use funnel::{
    dw_then_relu_backward, dw_then_relu_forward, dw_then_relu_margins, frelu_backward,
    frelu_flip_sensitivity, frelu_forward, frelu_margins, funnel_condition, BranchGrads,
    ConditionCache, ConditionKind, FunnelBranch, FunnelCache, FunnelConfig, FunnelGrads,
    FunnelParams, Fusion, PairCombine, WindowSpec,
};
pub(crate) use funnel::maxpool_runner_up_gap;

use crate::error::{Error, Result};
use crate::ops::Mode;
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Initial PReLU slope.
pub const PRELU_INIT: f64 = 0.25;

/// max(x, 0). At exactly zero the identity branch is selected.
pub fn relu_forward(x: &Tensor) -> Tensor {
    x.map(|v| if v >= 0.0 { v } else { 0.0 })
}

/// Passes the gradient where the identity branch was selected (x >= 0).
pub fn relu_backward(x: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
    let mut g = grad_out.clone();
    if g.shape() != x.shape() {
        return Err(Error::ShapeMismatch(format!(
            "relu backward: grad_out {} vs input {}",
            g.shape(),
            x.shape()
        )));
    }
    for (gv, &xv) in g.data_mut().iter_mut().zip(x.data()) {
        if xv < 0.0 {
            *gv = 0.0;
        }
    }
    Ok(g)
}

fn check_slopes(x: &Tensor, slopes: &[f64]) -> Result<()> {
    if slopes.len() != x.shape().c {
        return Err(Error::ShapeMismatch(format!(
            "prelu has {} slopes for {} channels",
            slopes.len(),
            x.shape().c
        )));
    }
    Ok(())
}

/// max(x, p_c * x) with a learnable per-channel slope.
pub fn prelu_forward(x: &Tensor, slopes: &[f64]) -> Result<Tensor> {
    check_slopes(x, slopes)?;
    let xs = x.shape();
    let mut y = x.clone();
    for n in 0..xs.n {
        for c in 0..xs.c {
            let p = slopes[c];
            let base = xs.index(n, c, 0, 0);
            for v in y.data_mut()[base..base + xs.h * xs.w].iter_mut() {
                let scaled = p * *v;
                if !(*v >= scaled) {
                    *v = scaled;
                }
            }
        }
    }
    Ok(y)
}

/// Gradients for input and slopes. The slope gradient accumulates over the
/// elements where the scaled branch won the max.
pub fn prelu_backward(
    x: &Tensor,
    slopes: &[f64],
    grad_out: &Tensor,
) -> Result<(Tensor, Vec<f64>)> {
    check_slopes(x, slopes)?;
    if grad_out.shape() != x.shape() {
        return Err(Error::ShapeMismatch(format!(
            "prelu backward: grad_out {} vs input {}",
            grad_out.shape(),
            x.shape()
        )));
    }
    let xs = x.shape();
    let mut gx = grad_out.clone();
    let mut gp = vec![0.0; slopes.len()];
    for n in 0..xs.n {
        for c in 0..xs.c {
            let p = slopes[c];
            let base = xs.index(n, c, 0, 0);
            for k in 0..xs.h * xs.w {
                let xv = x.data()[base + k];
                if xv >= p * xv {
                    // identity branch: gradient passes unchanged
                } else {
                    let g = grad_out.data()[base + k];
                    gx.data_mut()[base + k] = p * g;
                    gp[c] += xv * g;
                }
            }
        }
    }
    Ok((gx, gp))
}

/// Numerically stable logistic sigmoid.
pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// x * sigmoid(x); non-parametric. Approaches the identity for large x.
pub fn swish_forward(x: &Tensor) -> Tensor {
    x.map(|v| v * sigmoid(v))
}

/// d/dx = sigmoid(x) * (1 + x * (1 - sigmoid(x))).
pub fn swish_backward(x: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
    if grad_out.shape() != x.shape() {
        return Err(Error::ShapeMismatch(format!(
            "swish backward: grad_out {} vs input {}",
            grad_out.shape(),
            x.shape()
        )));
    }
    let mut g = grad_out.clone();
    for (gv, &xv) in g.data_mut().iter_mut().zip(x.data()) {
        let s = sigmoid(xv);
        *gv *= s * (1.0 + xv * (1.0 - s));
    }
    Ok(g)
}

/// Which activation a layer applies.
#[derive(Debug, Clone, PartialEq)]
pub enum ActivationKind {
    Relu,
    PRelu,
    Swish,
    FRelu(FunnelConfig),
    /// Spatial condition followed by a plain rectifier (ablation control).
    DwThenRelu(FunnelConfig),
}

impl ActivationKind {
    pub fn label(&self) -> String {
        match self {
            ActivationKind::Relu => "relu".into(),
            ActivationKind::PRelu => "prelu".into(),
            ActivationKind::Swish => "swish".into(),
            ActivationKind::FRelu(cfg) => cfg.describe(),
            ActivationKind::DwThenRelu(_) => "Max(DW(x), 0)".into(),
        }
    }
}

/// A parameterized activation: kind plus learnable coefficients.
#[derive(Debug, Clone)]
pub struct ActivationLayer {
    pub kind: ActivationKind,
    /// PReLU per-channel slopes; empty for other kinds.
    pub slopes: Vec<f64>,
    /// Funnel condition state; None for scalar activations.
    pub funnel: Option<FunnelParams>,
    pub channels: usize,
}

/// Saved forward intermediates. Scalar activations recompute from the input.
#[derive(Debug, Clone)]
pub enum ActCache {
    Stateless,
    Funnel(FunnelCache),
}

/// Gradients for a layer's learnable coefficients.
#[derive(Debug, Clone)]
pub struct ActGrads {
    pub slopes: Vec<f64>,
    pub funnel: Option<FunnelGrads>,
}

impl ActivationLayer {
    pub fn init(kind: ActivationKind, channels: usize, rng: &mut Rng) -> Result<ActivationLayer> {
        let (slopes, funnel) = match &kind {
            ActivationKind::Relu | ActivationKind::Swish => (Vec::new(), None),
            ActivationKind::PRelu => (vec![PRELU_INIT; channels], None),
            ActivationKind::FRelu(cfg) | ActivationKind::DwThenRelu(cfg) => {
                (Vec::new(), Some(FunnelParams::init(cfg, channels, rng)?))
            }
        };
        Ok(ActivationLayer { kind, slopes, funnel, channels })
    }

    pub fn forward(&self, x: &Tensor, mode: Mode) -> Result<(Tensor, ActCache)> {
        match &self.kind {
            ActivationKind::Relu => Ok((relu_forward(x), ActCache::Stateless)),
            ActivationKind::Swish => Ok((swish_forward(x), ActCache::Stateless)),
            ActivationKind::PRelu => Ok((prelu_forward(x, &self.slopes)?, ActCache::Stateless)),
            ActivationKind::FRelu(cfg) => {
                let (y, cache) = frelu_forward(x, cfg, self.params()?, mode)?;
                Ok((y, ActCache::Funnel(cache)))
            }
            ActivationKind::DwThenRelu(cfg) => {
                let (y, cache) = dw_then_relu_forward(x, cfg, self.params()?, mode)?;
                Ok((y, ActCache::Funnel(cache)))
            }
        }
    }

    pub fn backward(
        &self,
        x: &Tensor,
        cache: &ActCache,
        grad_out: &Tensor,
    ) -> Result<(Tensor, ActGrads)> {
        let no_grads = ActGrads { slopes: Vec::new(), funnel: None };
        match &self.kind {
            ActivationKind::Relu => Ok((relu_backward(x, grad_out)?, no_grads)),
            ActivationKind::Swish => Ok((swish_backward(x, grad_out)?, no_grads)),
            ActivationKind::PRelu => {
                let (gx, gp) = prelu_backward(x, &self.slopes, grad_out)?;
                Ok((gx, ActGrads { slopes: gp, funnel: None }))
            }
            ActivationKind::FRelu(cfg) => {
                let fc = self.funnel_cache(cache)?;
                let (gx, fg) = frelu_backward(x, cfg, self.params()?, fc, grad_out)?;
                Ok((gx, ActGrads { slopes: Vec::new(), funnel: Some(fg) }))
            }
            ActivationKind::DwThenRelu(cfg) => {
                let fc = self.funnel_cache(cache)?;
                let (gx, fg) = dw_then_relu_backward(x, cfg, self.params()?, fc, grad_out)?;
                Ok((gx, ActGrads { slopes: Vec::new(), funnel: Some(fg) }))
            }
        }
    }

    /// Fold a forward cache's updated running statistics into the layer
    /// (train-mode batch norm in the condition).
    pub fn apply_running(&mut self, cache: &ActCache) {
        let ActCache::Funnel(fc) = cache else { return };
        let Some(params) = self.funnel.as_mut() else { return };
        let n_branches = params.branches.len();
        for (k, slot) in fc.cond.running.iter().enumerate() {
            if let Some((rm, rv)) = slot {
                if k < n_branches {
                    params.branches[k].norm.running_mean = rm.clone();
                    params.branches[k].norm.running_var = rv.clone();
                } else if let Some(sn) = params.shared_norm.as_mut() {
                    sn.running_mean = rm.clone();
                    sn.running_var = rv.clone();
                }
            }
        }
    }

    fn params(&self) -> Result<&FunnelParams> {
        self.funnel
            .as_ref()
            .ok_or_else(|| Error::State("funnel activation has no parameters".into()))
    }

    fn funnel_cache<'a>(&self, cache: &'a ActCache) -> Result<&'a FunnelCache> {
        match cache {
            ActCache::Funnel(fc) => Ok(fc),
            ActCache::Stateless => {
                Err(Error::State("missing forward cache for funnel backward".into()))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::checks;
    use crate::gradcheck::{check, CheckSettings};
    use crate::ops::NormKind;

    fn away_from_kinks(t: &mut Tensor, margin: f64) {
        for v in t.data_mut().iter_mut() {
            if v.abs() < margin {
                *v += if *v >= 0.0 { margin } else { -margin };
            }
        }
    }

    #[test]
    fn relu_examples() {
        let x = Tensor::from_vec(1, 1, 1, 3, vec![-1.0, 0.0, 2.0]).unwrap();
        assert_eq!(relu_forward(&x).data(), &[0.0, 0.0, 2.0]);
        let g = Tensor::from_vec(1, 1, 1, 3, vec![5.0, 5.0, 5.0]).unwrap();
        let gx = relu_backward(&x, &g).unwrap();
        assert_eq!(gx.data(), &[0.0, 5.0, 5.0]);
    }

    #[test]
    fn relu_gradient_matches_finite_differences() {
        let mut rng = Rng::new(1);
        let mut x = Tensor::gaussian(1, 2, 4, 4, 0.0, 1.0, &mut rng).unwrap();
        away_from_kinks(&mut x, 1e-3);
        let report = check(&checks::relu_target(), &x, &[], CheckSettings::default()).unwrap();
        assert!(report.passed && report.max_rel_error <= 1e-6, "{}", report.render());
    }

    #[test]
    fn prelu_examples() {
        let x = Tensor::from_vec(1, 1, 1, 2, vec![-2.0, 3.0]).unwrap();
        let y = prelu_forward(&x, &[0.25]).unwrap();
        assert_eq!(y.data(), &[-0.5, 3.0]);
        // x >= 0 passes unchanged for any slope < 1
        let y = prelu_forward(&x, &[0.9]).unwrap();
        assert_eq!(y.data()[1], 3.0);
    }

    #[test]
    fn prelu_channel_mismatch_rejected() {
        let x = Tensor::zeros(1, 2, 2, 2).unwrap();
        assert!(matches!(prelu_forward(&x, &[0.25]), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn prelu_gradients_match_finite_differences() {
        let mut rng = Rng::new(2);
        let mut x = Tensor::gaussian(2, 3, 4, 4, 0.0, 1.0, &mut rng).unwrap();
        away_from_kinks(&mut x, 1e-3);
        let slopes = Tensor::from_vec(1, 3, 1, 1, vec![0.25, -0.3, 0.7]).unwrap();
        let report =
            check(&checks::prelu_target(), &x, &[slopes], CheckSettings::default()).unwrap();
        assert!(report.passed && report.max_rel_error <= 1e-6, "{}", report.render());
    }

    #[test]
    fn swish_examples() {
        let x = Tensor::from_vec(1, 1, 1, 3, vec![0.0, 100.0, -1000.0]).unwrap();
        let y = swish_forward(&x);
        assert_eq!(y.data()[0], 0.0);
        assert!((y.data()[1] - 100.0).abs() < 1e-9);
        assert!(y.data()[2].abs() < 1e-9 && y.data()[2].is_finite());
    }

    #[test]
    fn swish_gradient_matches_finite_differences() {
        let mut rng = Rng::new(3);
        let x = Tensor::gaussian(1, 2, 5, 5, 0.0, 2.0, &mut rng).unwrap();
        let report = check(&checks::swish_target(), &x, &[], CheckSettings::default()).unwrap();
        assert!(report.passed && report.max_rel_error <= 1e-6, "{}", report.render());
    }

    #[test]
    fn frelu_with_zero_weights_is_relu_bitwise() {
        let mut rng = Rng::new(4);
        let cfg = FunnelConfig {
            norm_kind: NormKind::None,
            ..FunnelConfig::default()
        };
        let mut params = FunnelParams::init(&cfg, 3, &mut rng).unwrap();
        for v in params.branches[0].window.weights.data_mut() {
            *v = 0.0;
        }
        let x = Tensor::gaussian(2, 3, 6, 6, 0.0, 1.5, &mut rng).unwrap();
        let (y, _) = frelu_forward(&x, &cfg, &params, Mode::Train).unwrap();
        let want = relu_forward(&x);
        for (a, b) in y.data().iter().zip(want.data()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn frelu_one_by_one_window_is_prelu_bitwise() {
        let mut rng = Rng::new(5);
        let cfg = FunnelConfig {
            window: WindowSpec::Square(1),
            norm_kind: NormKind::None,
            ..FunnelConfig::default()
        };
        let mut params = FunnelParams::init(&cfg, 2, &mut rng).unwrap();
        let shared = vec![0.25, -0.6];
        params.branches[0].window.weights =
            Tensor::from_vec(1, 2, 1, 1, shared.clone()).unwrap();
        let x = Tensor::gaussian(2, 2, 5, 5, 0.0, 1.0, &mut rng).unwrap();
        let (y, _) = frelu_forward(&x, &cfg, &params, Mode::Train).unwrap();
        let want = prelu_forward(&x, &shared).unwrap();
        for (a, b) in y.data().iter().zip(want.data()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn frelu_window_sum_example() {
        // 2x2 input, 3x3 all-ones window, zero padding: every window covers
        // the whole image, so T is the total sum everywhere.
        let cfg = FunnelConfig { norm_kind: NormKind::None, ..FunnelConfig::default() };
        let mut rng = Rng::new(6);
        let mut params = FunnelParams::init(&cfg, 1, &mut rng).unwrap();
        params.branches[0].window.weights = Tensor::filled(1, 1, 3, 3, 1.0).unwrap();
        let x = Tensor::from_vec(1, 1, 2, 2, vec![1.0, -1.0, -2.0, 3.0]).unwrap();
        let (t, _) = funnel_condition(&x, &cfg, &params, Mode::Train).unwrap();
        assert_eq!(t.data(), &[1.0, 1.0, 1.0, 1.0]);
        let (y, _) = frelu_forward(&x, &cfg, &params, Mode::Train).unwrap();
        assert_eq!(y.data(), &[1.0, 1.0, 1.0, 3.0]);
    }

    #[test]
    fn funnel_condition_center_window_sum() {
        let cfg = FunnelConfig { norm_kind: NormKind::None, ..FunnelConfig::default() };
        let mut rng = Rng::new(7);
        let mut params = FunnelParams::init(&cfg, 1, &mut rng).unwrap();
        params.branches[0].window.weights = Tensor::filled(1, 1, 3, 3, 1.0).unwrap();
        let x = Tensor::from_vec(
            1,
            1,
            3,
            3,
            vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0],
        )
        .unwrap();
        let (t, _) = funnel_condition(&x, &cfg, &params, Mode::Train).unwrap();
        assert_eq!(t.at(0, 0, 1, 1), 45.0);
    }

    #[test]
    fn frelu_dominates_identity_and_condition() {
        let mut rng = Rng::new(8);
        let cfg = FunnelConfig::default();
        let params = FunnelParams::init(&cfg, 2, &mut rng).unwrap();
        let x = Tensor::gaussian(2, 2, 6, 6, 0.0, 1.0, &mut rng).unwrap();
        let (t, _) = funnel_condition(&x, &cfg, &params, Mode::Train).unwrap();
        let (y, _) = frelu_forward(&x, &cfg, &params, Mode::Train).unwrap();
        for i in 0..y.len() {
            assert!(y.data()[i] >= x.data()[i]);
            assert!(y.data()[i] >= t.data()[i]);
            // selection consistency: the output IS one of the two branches
            assert!(
                y.data()[i].to_bits() == x.data()[i].to_bits()
                    || y.data()[i].to_bits() == t.data()[i].to_bits()
            );
        }
    }

    #[test]
    fn frelu_never_mixes_channels() {
        let mut rng = Rng::new(9);
        let cfg = FunnelConfig { norm_kind: NormKind::Batch, ..FunnelConfig::default() };
        let params = FunnelParams::init(&cfg, 2, &mut rng).unwrap();
        let x = Tensor::gaussian(1, 2, 5, 5, 0.0, 1.0, &mut rng).unwrap();
        let (y, _) = frelu_forward(&x, &cfg, &params, Mode::Train).unwrap();
        let mut x2 = x.clone();
        x2.set(0, 0, 2, 2, x.at(0, 0, 2, 2) + 0.37);
        let (y2, _) = frelu_forward(&x2, &cfg, &params, Mode::Train).unwrap();
        for i in 0..5 {
            for j in 0..5 {
                assert_eq!(y.at(0, 1, i, j).to_bits(), y2.at(0, 1, i, j).to_bits());
            }
        }
    }

    #[test]
    fn frelu_zero_grad_out_gives_zero_grads() {
        let mut rng = Rng::new(10);
        let cfg = FunnelConfig::default();
        let params = FunnelParams::init(&cfg, 2, &mut rng).unwrap();
        let x = Tensor::gaussian(2, 2, 4, 4, 0.0, 1.0, &mut rng).unwrap();
        let (_, cache) = frelu_forward(&x, &cfg, &params, Mode::Train).unwrap();
        let (gx, fg) = frelu_backward(&x, &cfg, &params, &cache, &x.zeros_like()).unwrap();
        assert!(gx.data().iter().all(|&v| v == 0.0));
        assert!(fg.branches[0].window.data().iter().all(|&v| v == 0.0));
        assert!(fg.branches[0].gamma.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn frelu_degenerate_backward_matches_relu_and_routes_to_weights() {
        let mut rng = Rng::new(11);
        let cfg = FunnelConfig { norm_kind: NormKind::None, ..FunnelConfig::default() };
        let mut params = FunnelParams::init(&cfg, 1, &mut rng).unwrap();
        for v in params.branches[0].window.weights.data_mut() {
            *v = 0.0;
        }
        let mut x = Tensor::gaussian(1, 1, 5, 5, 0.0, 1.0, &mut rng).unwrap();
        away_from_kinks(&mut x, 1e-2);
        let g = Tensor::gaussian(1, 1, 5, 5, 0.0, 1.0, &mut rng).unwrap();
        let (_, cache) = frelu_forward(&x, &cfg, &params, Mode::Train).unwrap();
        let (gx, fg) = frelu_backward(&x, &cfg, &params, &cache, &g).unwrap();
        assert_eq!(gx, relu_backward(&x, &g).unwrap());

        // where x < 0 the zero condition wins, so its gradient feeds the
        // window weights: grad_w = correlation of x with the masked gradient
        let mut masked = g.clone();
        for (mv, &xv) in masked.data_mut().iter_mut().zip(x.data()) {
            if xv >= 0.0 {
                *mv = 0.0;
            }
        }
        let (_, gw_expect) =
            crate::ops::depthwise_conv_backward(&x, &params.branches[0].window, &masked).unwrap();
        assert_eq!(fg.branches[0].window, gw_expect);
    }

    #[test]
    fn frelu_gradients_match_finite_differences_bn_train() {
        let mut rng = Rng::new(12);
        let cfg = FunnelConfig::default();
        let built = checks::frelu_target(&cfg, 2, &mut rng);
        let x = Tensor::gaussian(2, 2, 5, 5, 0.0, 1.0, &mut rng).unwrap();
        let report = check(built.target.as_ref(), &x, &built.params, CheckSettings::default())
            .unwrap();
        assert!(report.passed, "{}", report.render());
    }

    #[test]
    fn frelu_sum_fusion_gradients_match_finite_differences() {
        let mut rng = Rng::new(13);
        let cfg = FunnelConfig { fusion: Fusion::Sum, ..FunnelConfig::default() };
        let built = checks::frelu_target(&cfg, 2, &mut rng);
        let x = Tensor::gaussian(1, 2, 5, 5, 0.0, 1.0, &mut rng).unwrap();
        let report = check(built.target.as_ref(), &x, &built.params, CheckSettings::default())
            .unwrap();
        assert!(report.passed, "{}", report.render());
    }

    #[test]
    fn frelu_pair_both_combines_match_finite_differences() {
        for combine in [PairCombine::Sum, PairCombine::Max] {
            let mut rng = Rng::new(14);
            let cfg = FunnelConfig {
                window: WindowSpec::RowColPair,
                pair_combine: combine,
                ..FunnelConfig::default()
            };
            let built = checks::frelu_target(&cfg, 2, &mut rng);
            let x = Tensor::gaussian(1, 2, 5, 5, 0.0, 1.0, &mut rng).unwrap();
            let report =
                check(built.target.as_ref(), &x, &built.params, CheckSettings::default()).unwrap();
            assert!(report.passed, "{combine:?}: {}", report.render());
        }
    }

    #[test]
    fn frelu_shared_pair_norm_matches_finite_differences() {
        let mut rng = Rng::new(15);
        let cfg = FunnelConfig {
            window: WindowSpec::RowColPair,
            shared_pair_norm: true,
            ..FunnelConfig::default()
        };
        let built = checks::frelu_target(&cfg, 2, &mut rng);
        let x = Tensor::gaussian(1, 2, 5, 5, 0.0, 1.0, &mut rng).unwrap();
        let report =
            check(built.target.as_ref(), &x, &built.params, CheckSettings::default()).unwrap();
        assert!(report.passed, "{}", report.render());
    }

    #[test]
    fn frelu_pooled_conditions_forward_and_backward() {
        let mut rng = Rng::new(16);
        for kind in [ConditionKind::MaxPool, ConditionKind::AvgPool] {
            let cfg = FunnelConfig { condition_kind: kind, ..FunnelConfig::default() };
            let params = FunnelParams::init(&cfg, 2, &mut rng).unwrap();
            assert!(params.branches.is_empty());
            let x = Tensor::gaussian(1, 2, 5, 5, 0.0, 1.0, &mut rng).unwrap();
            let built = checks::frelu_target(&cfg, 2, &mut rng);
            let report =
                check(built.target.as_ref(), &x, &built.params, CheckSettings::default()).unwrap();
            assert!(report.passed, "{kind:?}: {}", report.render());
        }
    }

    #[test]
    fn dw_then_relu_examples_and_gradients() {
        let mut rng = Rng::new(17);
        let cfg = FunnelConfig { norm_kind: NormKind::None, ..FunnelConfig::default() };
        let mut params = FunnelParams::init(&cfg, 1, &mut rng).unwrap();
        for v in params.branches[0].window.weights.data_mut() {
            *v = 0.0;
        }
        let x = Tensor::gaussian(1, 1, 4, 4, 0.0, 1.0, &mut rng).unwrap();
        let (y, _) = dw_then_relu_forward(&x, &cfg, &params, Mode::Train).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));

        let cfg = FunnelConfig::default();
        let built = checks::dw_then_relu_target(&cfg, 2, &mut rng);
        let x = Tensor::gaussian(1, 2, 5, 5, 0.0, 1.0, &mut rng).unwrap();
        let report =
            check(built.target.as_ref(), &x, &built.params, CheckSettings::default()).unwrap();
        assert!(report.passed, "{}", report.render());
    }

    #[test]
    fn sum_fusion_always_rectifies() {
        let mut rng = Rng::new(18);
        let cfg = FunnelConfig { fusion: Fusion::Sum, ..FunnelConfig::default() };
        let params = FunnelParams::init(&cfg, 2, &mut rng).unwrap();
        let x = Tensor::gaussian(2, 2, 5, 5, 0.0, 2.0, &mut rng).unwrap();
        let (y, _) = frelu_forward(&x, &cfg, &params, Mode::Train).unwrap();
        assert!(y.data().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn pooled_pair_rejected() {
        let cfg = FunnelConfig {
            window: WindowSpec::RowColPair,
            condition_kind: ConditionKind::MaxPool,
            ..FunnelConfig::default()
        };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn activation_layer_round_trips_all_kinds() {
        let mut rng = Rng::new(19);
        let kinds = vec![
            ActivationKind::Relu,
            ActivationKind::PRelu,
            ActivationKind::Swish,
            ActivationKind::FRelu(FunnelConfig::default()),
            ActivationKind::DwThenRelu(FunnelConfig::default()),
        ];
        let x = Tensor::gaussian(2, 3, 5, 5, 0.0, 1.0, &mut rng).unwrap();
        for kind in kinds {
            let layer = ActivationLayer::init(kind.clone(), 3, &mut rng).unwrap();
            let (y, cache) = layer.forward(&x, Mode::Train).unwrap();
            assert_eq!(y.shape(), x.shape());
            let g = Tensor::gaussian(2, 3, 5, 5, 0.0, 1.0, &mut rng).unwrap();
            let (gx, _) = layer.backward(&x, &cache, &g).unwrap();
            assert_eq!(gx.shape(), x.shape());
        }
    }
}
