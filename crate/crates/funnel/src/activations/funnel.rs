//! The funnel activation and its ablation variants.
//!
//! The funnel condition is a per-channel spatial window response: a depthwise
//! convolution followed by a normalization layer. The activation fuses the
//! identity path with the condition, either by per-element max or by sum
//! followed by a rectifier. Variants cover parameter-free pooled conditions,
//! window geometries from 1x1 to 7x7, and the 1x3 + 3x1 window pair.

use crate::error::{Error, Result};
use crate::ops::{
    depthwise_conv_backward, depthwise_conv_forward, norm_backward, norm_forward,
    window_avgpool, window_avgpool_backward, window_maxpool, window_maxpool_backward,
    DepthwiseConvParams, Mode, NormCache, NormKind, NormParams,
};
use crate::rng::Rng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WindowSpec {
    /// Odd k x k parametric pooling window.
    Square(usize),
    /// The 1x3 and 3x1 window pair, merged by `pair_combine`.
    RowColPair,
}

/// How the identity path and the condition merge.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fusion {
    Max,
    /// Sum of identity and condition, wrapped in a rectifier (it does not
    /// converge bare).
    Sum,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PairCombine {
    Sum,
    Max,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConditionKind {
    /// Learned window coefficients followed by a norm.
    Parametric,
    /// Parameter-free max pooling over the window; no norm.
    MaxPool,
    /// Parameter-free average pooling over the window; no norm.
    AvgPool,
}

/// Complete description of one funnel activation variant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FunnelConfig {
    pub window: WindowSpec,
    pub fusion: Fusion,
    /// Only meaningful for `RowColPair`.
    pub pair_combine: PairCombine,
    pub condition_kind: ConditionKind,
    /// Norm applied after the parametric condition.
    pub norm_kind: NormKind,
    /// Std of the gaussian window init; near-zero keeps conditions small.
    pub init_std: f64,
    /// Pair windows: one norm after combining instead of one per branch.
    pub shared_pair_norm: bool,
}

impl Default for FunnelConfig {
    fn default() -> Self {
        FunnelConfig {
            window: WindowSpec::Square(3),
            fusion: Fusion::Max,
            pair_combine: PairCombine::Max,
            condition_kind: ConditionKind::Parametric,
            norm_kind: NormKind::Batch,
            init_std: 0.1,
            shared_pair_norm: false,
        }
    }
}

impl FunnelConfig {
    pub fn validate(&self) -> Result<()> {
        match self.window {
            WindowSpec::Square(k) => {
                if k % 2 == 0 || k == 0 {
                    return Err(Error::Config(format!(
                        "square window must be odd and >= 1, got {k}"
                    )));
                }
            }
            WindowSpec::RowColPair => {
                if self.condition_kind != ConditionKind::Parametric {
                    return Err(Error::Config(
                        "the 1x3/3x1 window pair requires the parametric condition".into(),
                    ));
                }
            }
        }
        if self.init_std < 0.0 {
            return Err(Error::Config(format!("init_std must be >= 0, got {}", self.init_std)));
        }
        Ok(())
    }

    pub fn is_parametric(&self) -> bool {
        self.condition_kind == ConditionKind::Parametric
    }

    /// Window shapes of each parametric branch.
    pub fn branch_windows(&self) -> Vec<(usize, usize)> {
        match self.window {
            WindowSpec::Square(k) => vec![(k, k)],
            WindowSpec::RowColPair => vec![(1, 3), (3, 1)],
        }
    }

    /// Human-readable variant description.
    pub fn describe(&self) -> String {
        let win = match self.window {
            WindowSpec::Square(k) => format!("{k}x{k}"),
            WindowSpec::RowColPair => match self.pair_combine {
                PairCombine::Sum => "Sum(1x3,3x1)".into(),
                PairCombine::Max => "Max(1x3,3x1)".into(),
            },
        };
        let cond = match self.condition_kind {
            ConditionKind::Parametric => format!("ParamPool({win})"),
            ConditionKind::MaxPool => format!("MaxPool({win})"),
            ConditionKind::AvgPool => format!("AvgPool({win})"),
        };
        match self.fusion {
            Fusion::Max => format!("Max(x, {cond})"),
            Fusion::Sum => format!("Sum(x, {cond})"),
        }
    }
}

/// One parametric condition branch: window weights plus its norm.
#[derive(Debug, Clone)]
pub struct FunnelBranch {
    pub window: DepthwiseConvParams,
    pub norm: NormParams,
}

/// Learnable state of a funnel activation. Pooled conditions carry nothing.
#[derive(Debug, Clone)]
pub struct FunnelParams {
    pub branches: Vec<FunnelBranch>,
    /// Present only under `shared_pair_norm`.
    pub shared_norm: Option<NormParams>,
}

impl FunnelParams {
    /// Gaussian window init; norm affine starts at identity.
    pub fn init(cfg: &FunnelConfig, channels: usize, rng: &mut Rng) -> Result<FunnelParams> {
        cfg.validate()?;
        if !cfg.is_parametric() {
            return Ok(FunnelParams { branches: Vec::new(), shared_norm: None });
        }
        let per_branch_norm = !(cfg.window == WindowSpec::RowColPair && cfg.shared_pair_norm);
        let mut branches = Vec::new();
        for (kh, kw) in cfg.branch_windows() {
            let weights = Tensor::gaussian(1, channels, kh, kw, 0.0, cfg.init_std, rng)?;
            let norm_kind = if per_branch_norm { cfg.norm_kind } else { NormKind::None };
            branches.push(FunnelBranch {
                window: DepthwiseConvParams::same(weights)?,
                norm: NormParams::new(norm_kind, channels),
            });
        }
        let shared_norm = if per_branch_norm {
            None
        } else {
            Some(NormParams::new(cfg.norm_kind, channels))
        };
        Ok(FunnelParams { branches, shared_norm })
    }

    pub fn channels(&self) -> Option<usize> {
        self.branches.first().map(|b| b.window.channels())
    }

    /// Learnable tensors in canonical order: per branch the window weights,
    /// then gamma and beta when the branch norm is affine; the shared norm's
    /// gamma and beta last. Gamma/beta are carried as (1,c,1,1) tensors.
    pub fn flatten(&self) -> Vec<Tensor> {
        let mut out = Vec::new();
        for b in &self.branches {
            out.push(b.window.weights.clone());
            if b.norm.kind != NormKind::None && b.norm.affine {
                out.push(vec_to_tensor(&b.norm.gamma));
                out.push(vec_to_tensor(&b.norm.beta));
            }
        }
        if let Some(sn) = &self.shared_norm {
            if sn.kind != NormKind::None && sn.affine {
                out.push(vec_to_tensor(&sn.gamma));
                out.push(vec_to_tensor(&sn.beta));
            }
        }
        out
    }

    /// Inverse of `flatten`, keeping non-learnable state (running stats).
    pub fn unflatten(&self, tensors: &[Tensor]) -> Result<FunnelParams> {
        let mut out = self.clone();
        let mut it = tensors.iter();
        let mut take = |what: &str| -> Result<&Tensor> {
            it.next().ok_or_else(|| Error::State(format!("missing tensor for {what}")))
        };
        for b in out.branches.iter_mut() {
            b.window.weights = take("window")?.clone();
            if b.norm.kind != NormKind::None && b.norm.affine {
                b.norm.gamma = take("gamma")?.data().to_vec();
                b.norm.beta = take("beta")?.data().to_vec();
            }
        }
        if let Some(sn) = out.shared_norm.as_mut() {
            if sn.kind != NormKind::None && sn.affine {
                sn.gamma = take("shared gamma")?.data().to_vec();
                sn.beta = take("shared beta")?.data().to_vec();
            }
        }
        if it.next().is_some() {
            return Err(Error::State("too many tensors for funnel params".into()));
        }
        Ok(out)
    }
}

fn vec_to_tensor(v: &[f64]) -> Tensor {
    Tensor::from_vec(1, v.len(), 1, 1, v.to_vec()).expect("channel vector to tensor")
}

/// Forward intermediates of the condition, needed by its backward.
#[derive(Debug, Clone)]
pub struct ConditionCache {
    /// The condition tensor T(x).
    pub t: Tensor,
    /// Inputs to the pair combine: post-norm branch outputs, or raw window
    /// responses under a shared norm. Empty unless the window is a pair.
    combine_inputs: Vec<Tensor>,
    norm_caches: Vec<NormCache>,
    shared_norm_cache: Option<NormCache>,
    /// Updated running stats, one slot per branch norm plus the shared norm.
    pub running: Vec<Option<(Vec<f64>, Vec<f64>)>>,
}

/// Gradients for every learnable piece of a funnel activation.
#[derive(Debug, Clone)]
pub struct FunnelGrads {
    pub branches: Vec<BranchGrads>,
    pub shared_gamma: Vec<f64>,
    pub shared_beta: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct BranchGrads {
    pub window: Tensor,
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
}

impl FunnelGrads {
    /// Same canonical order as `FunnelParams::flatten`.
    pub fn flatten(&self, params: &FunnelParams) -> Vec<Tensor> {
        let mut out = Vec::new();
        for (bg, b) in self.branches.iter().zip(&params.branches) {
            out.push(bg.window.clone());
            if b.norm.kind != NormKind::None && b.norm.affine {
                out.push(vec_to_tensor(&bg.gamma));
                out.push(vec_to_tensor(&bg.beta));
            }
        }
        if let Some(sn) = &params.shared_norm {
            if sn.kind != NormKind::None && sn.affine {
                out.push(vec_to_tensor(&self.shared_gamma));
                out.push(vec_to_tensor(&self.shared_beta));
            }
        }
        out
    }
}

fn check_params(cfg: &FunnelConfig, params: &FunnelParams, channels: usize) -> Result<()> {
    cfg.validate()?;
    if !cfg.is_parametric() {
        if !params.branches.is_empty() {
            return Err(Error::Config(
                "pooled conditions carry no learnable parameters".into(),
            ));
        }
        return Ok(());
    }
    let windows = cfg.branch_windows();
    if params.branches.len() != windows.len() {
        return Err(Error::Config(format!(
            "config expects {} condition branches, params have {}",
            windows.len(),
            params.branches.len()
        )));
    }
    for (b, (kh, kw)) in params.branches.iter().zip(windows) {
        if b.window.kh() != kh || b.window.kw() != kw {
            return Err(Error::Config(format!(
                "branch window is {}x{}, config says {kh}x{kw}",
                b.window.kh(),
                b.window.kw()
            )));
        }
        if b.window.channels() != channels {
            return Err(Error::ShapeMismatch(format!(
                "condition has {} channels, input has {channels}",
                b.window.channels()
            )));
        }
    }
    Ok(())
}

fn pool_window(cfg: &FunnelConfig) -> (usize, usize) {
    match cfg.window {
        WindowSpec::Square(k) => (k, k),
        WindowSpec::RowColPair => unreachable!("validated: pooled pair rejected"),
    }
}

/// The funnel condition T(x): window response, normalized when parametric;
/// plain pooling otherwise.
pub fn funnel_condition(
    x: &Tensor,
    cfg: &FunnelConfig,
    params: &FunnelParams,
    mode: Mode,
) -> Result<(Tensor, ConditionCache)> {
    check_params(cfg, params, x.shape().c)?;
    match cfg.condition_kind {
        ConditionKind::MaxPool => {
            let (kh, kw) = pool_window(cfg);
            let t = window_maxpool(x, kh, kw)?;
            Ok((t.clone(), ConditionCache {
                t,
                combine_inputs: Vec::new(),
                norm_caches: Vec::new(),
                shared_norm_cache: None,
                running: Vec::new(),
            }))
        }
        ConditionKind::AvgPool => {
            let (kh, kw) = pool_window(cfg);
            let t = window_avgpool(x, kh, kw)?;
            Ok((t.clone(), ConditionCache {
                t,
                combine_inputs: Vec::new(),
                norm_caches: Vec::new(),
                shared_norm_cache: None,
                running: Vec::new(),
            }))
        }
        ConditionKind::Parametric => {
            let mut branch_out = Vec::new();
            let mut norm_caches = Vec::new();
            let mut running = Vec::new();
            for b in &params.branches {
                let s = depthwise_conv_forward(x, &b.window)?;
                let nf = norm_forward(&s, &b.norm, mode)?;
                norm_caches.push(nf.cache);
                running.push(nf.running);
                branch_out.push(nf.y);
            }
            let (t, combine_inputs, shared_norm_cache) = if branch_out.len() == 1 {
                (branch_out.pop().expect("one branch"), Vec::new(), None)
            } else {
                let combined = match cfg.pair_combine {
                    PairCombine::Sum => branch_out[0].add(&branch_out[1])?,
                    PairCombine::Max => branch_out[0].elementwise_max(&branch_out[1])?,
                };
                match &params.shared_norm {
                    Some(sn) => {
                        let nf = norm_forward(&combined, sn, mode)?;
                        running.push(nf.running);
                        (nf.y, branch_out, Some(nf.cache))
                    }
                    None => (combined, branch_out, None),
                }
            };
            Ok((t.clone(), ConditionCache { t, combine_inputs, norm_caches, shared_norm_cache, running }))
        }
    }
}

/// Gradient of the condition w.r.t. the input and all condition parameters.
fn condition_backward(
    x: &Tensor,
    cfg: &FunnelConfig,
    params: &FunnelParams,
    cache: &ConditionCache,
    grad_t: &Tensor,
) -> Result<(Tensor, FunnelGrads)> {
    let empty = FunnelGrads {
        branches: Vec::new(),
        shared_gamma: Vec::new(),
        shared_beta: Vec::new(),
    };
    match cfg.condition_kind {
        ConditionKind::MaxPool => {
            let (kh, kw) = pool_window(cfg);
            Ok((window_maxpool_backward(x, kh, kw, grad_t)?, empty))
        }
        ConditionKind::AvgPool => {
            let (kh, kw) = pool_window(cfg);
            Ok((window_avgpool_backward(x, kh, kw, grad_t)?, empty))
        }
        ConditionKind::Parametric => {
            let mut grad_x = x.zeros_like();
            let mut grads = empty;

            // Split the incoming gradient across branches.
            let (branch_grads_t, shared_gamma, shared_beta): (Vec<Tensor>, Vec<f64>, Vec<f64>) =
                if params.branches.len() == 1 {
                    (vec![grad_t.clone()], Vec::new(), Vec::new())
                } else {
                    let (g_combined, sg, sb) = match (&params.shared_norm, &cache.shared_norm_cache)
                    {
                        (Some(sn), Some(snc)) => {
                            let ng = norm_backward(sn, snc, grad_t)?;
                            (ng.grad_x, ng.grad_gamma, ng.grad_beta)
                        }
                        _ => (grad_t.clone(), Vec::new(), Vec::new()),
                    };
                    let (c0, c1) = (&cache.combine_inputs[0], &cache.combine_inputs[1]);
                    match cfg.pair_combine {
                        PairCombine::Sum => (vec![g_combined.clone(), g_combined], sg, sb),
                        PairCombine::Max => {
                            // ties route to the first (1x3) branch
                            let mut g0 = g_combined.clone();
                            let mut g1 = g_combined;
                            for ((gv0, gv1), (&a, &b)) in g0
                                .data_mut()
                                .iter_mut()
                                .zip(g1.data_mut().iter_mut())
                                .zip(c0.data().iter().zip(c1.data()))
                            {
                                if a >= b {
                                    *gv1 = 0.0;
                                } else {
                                    *gv0 = 0.0;
                                }
                            }
                            (vec![g0, g1], sg, sb)
                        }
                    }
                };
            grads.shared_gamma = shared_gamma;
            grads.shared_beta = shared_beta;

            for (k, b) in params.branches.iter().enumerate() {
                let ng = norm_backward(&b.norm, &cache.norm_caches[k], &branch_grads_t[k])?;
                let (gx, gw) = depthwise_conv_backward(x, &b.window, &ng.grad_x)?;
                grad_x = grad_x.add(&gx)?;
                grads.branches.push(BranchGrads {
                    window: gw,
                    gamma: ng.grad_gamma,
                    beta: ng.grad_beta,
                });
            }
            Ok((grad_x, grads))
        }
    }
}

/// Forward intermediates of the full activation.
#[derive(Debug, Clone)]
pub struct FunnelCache {
    pub cond: ConditionCache,
}

/// f(x) = max(x, T(x)), or relu(x + T(x)) under sum fusion.
pub fn frelu_forward(
    x: &Tensor,
    cfg: &FunnelConfig,
    params: &FunnelParams,
    mode: Mode,
) -> Result<(Tensor, FunnelCache)> {
    let (t, cond) = funnel_condition(x, cfg, params, mode)?;
    let y = match cfg.fusion {
        Fusion::Max => x.elementwise_max(&t)?,
        Fusion::Sum => x.add(&t)?.map(|v| if v >= 0.0 { v } else { 0.0 }),
    };
    Ok((y, FunnelCache { cond }))
}

/// Adjoint of `frelu_forward`. Max fusion routes each element's gradient to
/// the selected branch; ties go to the identity path. The condition branch
/// gradient flows back through the norm and the window weights.
pub fn frelu_backward(
    x: &Tensor,
    cfg: &FunnelConfig,
    params: &FunnelParams,
    cache: &FunnelCache,
    grad_out: &Tensor,
) -> Result<(Tensor, FunnelGrads)> {
    let t = &cache.cond.t;
    if grad_out.shape() != x.shape() {
        return Err(Error::ShapeMismatch(format!(
            "frelu backward: grad_out {} vs input {}",
            grad_out.shape(),
            x.shape()
        )));
    }
    let (mut g_identity, g_t) = match cfg.fusion {
        Fusion::Max => {
            let mut gi = grad_out.clone();
            let mut gt = grad_out.clone();
            for ((giv, gtv), (&xv, &tv)) in gi
                .data_mut()
                .iter_mut()
                .zip(gt.data_mut().iter_mut())
                .zip(x.data().iter().zip(t.data()))
            {
                if xv >= tv {
                    *gtv = 0.0;
                } else {
                    *giv = 0.0;
                }
            }
            (gi, gt)
        }
        Fusion::Sum => {
            let mut g = grad_out.clone();
            for (gv, (&xv, &tv)) in g.data_mut().iter_mut().zip(x.data().iter().zip(t.data())) {
                if xv + tv < 0.0 {
                    *gv = 0.0;
                }
            }
            (g.clone(), g)
        }
    };
    let (g_x_cond, grads) = condition_backward(x, cfg, params, &cache.cond, &g_t)?;
    g_identity = g_identity.add(&g_x_cond)?;
    Ok((g_identity, grads))
}

/// Distance of each output element to the nearest selection flip: the
/// fusion margin, and for max-combined pairs or max-pooled conditions the
/// gap to the runner-up. Feeds the gradient checker's kink exclusion.
pub fn frelu_margins(
    x: &Tensor,
    cfg: &FunnelConfig,
    params: &FunnelParams,
    mode: Mode,
) -> Result<Tensor> {
    let (t, cond) = funnel_condition(x, cfg, params, mode)?;
    let mut margins = x.zeros_like();
    for (i, m) in margins.data_mut().iter_mut().enumerate() {
        let fusion_margin = match cfg.fusion {
            Fusion::Max => (x.data()[i] - t.data()[i]).abs(),
            Fusion::Sum => (x.data()[i] + t.data()[i]).abs(),
        };
        let mut margin = fusion_margin;
        if cfg.window == WindowSpec::RowColPair && cfg.pair_combine == PairCombine::Max {
            let gap = (cond.combine_inputs[0].data()[i] - cond.combine_inputs[1].data()[i]).abs();
            margin = margin.min(gap);
        }
        *m = margin;
    }
    if cfg.condition_kind == ConditionKind::MaxPool {
        let (kh, kw) = pool_window(cfg);
        let gaps = maxpool_runner_up_gap(x, kh, kw);
        for (m, g) in margins.data_mut().iter_mut().zip(gaps.data()) {
            *m = m.min(*g);
        }
    }
    Ok(margins)
}

/// Upper bound on how far one coordinate step can move any selection margin
/// of the activation, per unit step. Norm layers amplify weight
/// perturbations by their inverse standard deviation, so the gradient
/// checker widens its kink-exclusion radius by this factor.
pub fn frelu_flip_sensitivity(
    x: &Tensor,
    cfg: &FunnelConfig,
    params: &FunnelParams,
    mode: Mode,
) -> Result<f64> {
    if !cfg.is_parametric() {
        // pooled taps move one-for-one with the input; the fused margin
        // involves two moving quantities
        return Ok(2.0);
    }
    let (_, cache) = funnel_condition(x, cfg, params, mode)?;
    let mut inv_std_max = 1.0_f64;
    for nc in &cache.norm_caches {
        inv_std_max = inv_std_max.max(nc.inv_std_max());
    }
    if let Some(snc) = &cache.shared_norm_cache {
        inv_std_max = inv_std_max.max(snc.inv_std_max());
    }
    let mut gamma_max = 1.0_f64;
    for b in &params.branches {
        gamma_max = b.norm.gamma.iter().fold(gamma_max, |a, &g| a.max(g.abs()));
    }
    if let Some(sn) = &params.shared_norm {
        gamma_max = sn.gamma.iter().fold(gamma_max, |a, &g| a.max(g.abs()));
    }
    let max_abs_x = x.data().iter().fold(0.0_f64, |a, &v| a.max(v.abs()));
    let mut drive = 1.0_f64;
    for (b, (kh, kw)) in params.branches.iter().zip(cfg.branch_windows()) {
        let area = (kh * kw) as f64;
        let w_max = b.window.weights.data().iter().fold(0.0_f64, |a, &v| a.max(v.abs()));
        // weight coordinates drive the window response by the local input
        // mass; input coordinates drive it by the weight mass
        drive = drive.max(area * max_abs_x).max(area * w_max);
    }
    Ok(2.0 * gamma_max * inv_std_max * drive)
}

/// Per window: gap between the largest and second-largest tap.
pub(crate) fn maxpool_runner_up_gap(x: &Tensor, kh: usize, kw: usize) -> Tensor {
    let xs = x.shape();
    let (rh, rw) = ((kh - 1) / 2, (kw - 1) / 2);
    let mut out = x.zeros_like();
    for n in 0..xs.n {
        for c in 0..xs.c {
            for i in 0..xs.h {
                for j in 0..xs.w {
                    let (i0, i1) = (i.saturating_sub(rh), (i + rh + 1).min(xs.h));
                    let (j0, j1) = (j.saturating_sub(rw), (j + rw + 1).min(xs.w));
                    let mut top = f64::NEG_INFINITY;
                    let mut second = f64::NEG_INFINITY;
                    for ii in i0..i1 {
                        for jj in j0..j1 {
                            let v = x.at(n, c, ii, jj);
                            if v > top {
                                second = top;
                                top = v;
                            } else if v > second {
                                second = v;
                            }
                        }
                    }
                    let gap = if second.is_finite() { top - second } else { f64::INFINITY };
                    out.set(n, c, i, j, gap);
                }
            }
        }
    }
    out
}

/// Table-3-style control: spatial condition followed by a plain rectifier,
/// relu(norm(dw(x))). Separates the condition from the max non-linearity.
pub fn dw_then_relu_forward(
    x: &Tensor,
    cfg: &FunnelConfig,
    params: &FunnelParams,
    mode: Mode,
) -> Result<(Tensor, FunnelCache)> {
    require_square_parametric(cfg)?;
    let (t, cond) = funnel_condition(x, cfg, params, mode)?;
    let y = t.map(|v| if v >= 0.0 { v } else { 0.0 });
    Ok((y, FunnelCache { cond }))
}

pub fn dw_then_relu_backward(
    x: &Tensor,
    cfg: &FunnelConfig,
    params: &FunnelParams,
    cache: &FunnelCache,
    grad_out: &Tensor,
) -> Result<(Tensor, FunnelGrads)> {
    require_square_parametric(cfg)?;
    let t = &cache.cond.t;
    let mut g_t = grad_out.clone();
    for (gv, &tv) in g_t.data_mut().iter_mut().zip(t.data()) {
        if tv < 0.0 {
            *gv = 0.0;
        }
    }
    condition_backward(x, cfg, params, &cache.cond, &g_t)
}

pub fn dw_then_relu_margins(
    x: &Tensor,
    cfg: &FunnelConfig,
    params: &FunnelParams,
    mode: Mode,
) -> Result<Tensor> {
    require_square_parametric(cfg)?;
    let (t, _) = funnel_condition(x, cfg, params, mode)?;
    Ok(t.map(f64::abs))
}

fn require_square_parametric(cfg: &FunnelConfig) -> Result<()> {
    if !matches!(cfg.window, WindowSpec::Square(_)) || !cfg.is_parametric() {
        return Err(Error::Config(
            "dw-then-relu uses a square parametric window".into(),
        ));
    }
    Ok(())
}
