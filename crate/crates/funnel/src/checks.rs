//! Ready-made gradient-check targets for every differentiable op in the
//! crate, shared by unit tests, the acceptance suite, and the `gradcheck`
//! CLI subcommand.
//!
//! Parameter tensors follow each target's canonical order; per-channel
//! vectors travel as (1,c,1,1) tensors so the checker can probe them
//! coordinate by coordinate.

use crate::activations::{
    dw_then_relu_backward, dw_then_relu_forward, dw_then_relu_margins, frelu_backward,
    frelu_flip_sensitivity, frelu_forward, frelu_margins, prelu_backward, prelu_forward,
    relu_backward, relu_forward, swish_backward, swish_forward, FunnelConfig, FunnelParams,
};
use crate::error::{Error, Result};
use crate::gradcheck::CheckTarget;
use crate::ops::{
    conv_backward, conv_forward, depthwise_conv_backward, depthwise_conv_forward, norm_backward,
    norm_forward, window_avgpool, window_avgpool_backward, window_maxpool,
    window_maxpool_backward, ConvParams, DepthwiseConvParams, Mode, NormKind, NormParams,
};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// A target plus the parameter tensors it was built with.
pub struct BuiltCheck {
    pub target: Box<dyn CheckTarget>,
    pub params: Vec<Tensor>,
}

// ---- scalar activations -------------------------------------------------

pub struct ReluTarget;

impl CheckTarget for ReluTarget {
    fn forward(&self, x: &Tensor, _p: &[Tensor]) -> Result<Tensor> {
        Ok(relu_forward(x))
    }
    fn backward(&self, x: &Tensor, _p: &[Tensor], g: &Tensor) -> Result<(Tensor, Vec<Tensor>)> {
        Ok((relu_backward(x, g)?, Vec::new()))
    }
    fn kink_margins(&self, x: &Tensor, _p: &[Tensor]) -> Result<Option<Tensor>> {
        Ok(Some(x.map(f64::abs)))
    }
}

pub fn relu_target() -> ReluTarget {
    ReluTarget
}

pub struct PReluTarget;

fn slopes_of(params: &[Tensor]) -> Result<Vec<f64>> {
    params
        .first()
        .map(|t| t.data().to_vec())
        .ok_or_else(|| Error::State("prelu target expects a slope tensor".into()))
}

impl CheckTarget for PReluTarget {
    fn forward(&self, x: &Tensor, p: &[Tensor]) -> Result<Tensor> {
        prelu_forward(x, &slopes_of(p)?)
    }
    fn backward(&self, x: &Tensor, p: &[Tensor], g: &Tensor) -> Result<(Tensor, Vec<Tensor>)> {
        let slopes = slopes_of(p)?;
        let (gx, gp) = prelu_backward(x, &slopes, g)?;
        Ok((gx, vec![Tensor::from_vec(1, gp.len(), 1, 1, gp)?]))
    }
    fn kink_margins(&self, x: &Tensor, p: &[Tensor]) -> Result<Option<Tensor>> {
        let slopes = slopes_of(p)?;
        let xs = x.shape();
        let mut m = x.zeros_like();
        for n in 0..xs.n {
            for c in 0..xs.c {
                let base = xs.index(n, c, 0, 0);
                for k in 0..xs.h * xs.w {
                    let xv = x.data()[base + k];
                    m.data_mut()[base + k] = (xv - slopes[c] * xv).abs();
                }
            }
        }
        Ok(Some(m))
    }
    fn flip_sensitivity(&self, x: &Tensor, _p: &[Tensor]) -> Result<f64> {
        // a slope step of h moves the margin by h*|x|
        Ok(x.data().iter().fold(2.0_f64, |a, &v| a.max(v.abs())))
    }
}

pub fn prelu_target() -> PReluTarget {
    PReluTarget
}

pub struct SwishTarget;

impl CheckTarget for SwishTarget {
    fn forward(&self, x: &Tensor, _p: &[Tensor]) -> Result<Tensor> {
        Ok(swish_forward(x))
    }
    fn backward(&self, x: &Tensor, _p: &[Tensor], g: &Tensor) -> Result<(Tensor, Vec<Tensor>)> {
        Ok((swish_backward(x, g)?, Vec::new()))
    }
}

pub fn swish_target() -> SwishTarget {
    SwishTarget
}

// ---- convolution --------------------------------------------------------

/// Depthwise conv with same padding; params[0] are the window weights.
pub struct DwConvTarget;

impl CheckTarget for DwConvTarget {
    fn forward(&self, x: &Tensor, p: &[Tensor]) -> Result<Tensor> {
        let dw = DepthwiseConvParams::same(p[0].clone())?;
        depthwise_conv_forward(x, &dw)
    }
    fn backward(&self, x: &Tensor, p: &[Tensor], g: &Tensor) -> Result<(Tensor, Vec<Tensor>)> {
        let dw = DepthwiseConvParams::same(p[0].clone())?;
        let (gx, gw) = depthwise_conv_backward(x, &dw, g)?;
        Ok((gx, vec![gw]))
    }
}

pub fn dwconv_target() -> DwConvTarget {
    DwConvTarget
}

/// Full conv; params are [weights] or [weights, bias(1,c_out,1,1)].
pub struct ConvTarget {
    pub stride: usize,
    pub padding: (usize, usize),
}

impl ConvTarget {
    fn build(&self, p: &[Tensor]) -> Result<ConvParams> {
        let bias = p.get(1).map(|b| b.data().to_vec());
        ConvParams::new(p[0].clone(), bias, self.stride, self.padding)
    }
}

impl CheckTarget for ConvTarget {
    fn forward(&self, x: &Tensor, p: &[Tensor]) -> Result<Tensor> {
        conv_forward(x, &self.build(p)?)
    }
    fn backward(&self, x: &Tensor, p: &[Tensor], g: &Tensor) -> Result<(Tensor, Vec<Tensor>)> {
        let cp = self.build(p)?;
        let grads = conv_backward(x, &cp, g)?;
        let mut out = vec![grads.grad_weights];
        if let Some(gb) = grads.grad_bias {
            out.push(Tensor::from_vec(1, gb.len(), 1, 1, gb)?);
        }
        Ok((grads.grad_x, out))
    }
}

// ---- normalization ------------------------------------------------------

/// Train-mode norm; params are [gamma(1,c,1,1), beta(1,c,1,1)].
pub struct NormTarget {
    pub kind: NormKind,
}

impl NormTarget {
    fn build(&self, p: &[Tensor]) -> NormParams {
        let c = p[0].len();
        let mut np = NormParams::new(self.kind, c);
        np.gamma = p[0].data().to_vec();
        np.beta = p[1].data().to_vec();
        np
    }
}

impl CheckTarget for NormTarget {
    fn forward(&self, x: &Tensor, p: &[Tensor]) -> Result<Tensor> {
        Ok(norm_forward(x, &self.build(p), Mode::Train)?.y)
    }
    fn backward(&self, x: &Tensor, p: &[Tensor], g: &Tensor) -> Result<(Tensor, Vec<Tensor>)> {
        let np = self.build(p);
        let out = norm_forward(x, &np, Mode::Train)?;
        let grads = norm_backward(&np, &out.cache, g)?;
        Ok((
            grads.grad_x,
            vec![
                Tensor::from_vec(1, grads.grad_gamma.len(), 1, 1, grads.grad_gamma)?,
                Tensor::from_vec(1, grads.grad_beta.len(), 1, 1, grads.grad_beta)?,
            ],
        ))
    }
}

/// Random affine so the gamma path is actually exercised.
pub fn norm_target(kind: NormKind, channels: usize, rng: &mut Rng) -> BuiltCheck {
    let gamma = Tensor::gaussian(1, channels, 1, 1, 1.0, 0.2, rng).expect("gamma");
    let beta = Tensor::gaussian(1, channels, 1, 1, 0.0, 0.2, rng).expect("beta");
    BuiltCheck { target: Box::new(NormTarget { kind }), params: vec![gamma, beta] }
}

// ---- pooling ------------------------------------------------------------

pub struct MaxPoolTarget {
    pub k: usize,
}

impl CheckTarget for MaxPoolTarget {
    fn forward(&self, x: &Tensor, _p: &[Tensor]) -> Result<Tensor> {
        window_maxpool(x, self.k, self.k)
    }
    fn backward(&self, x: &Tensor, _p: &[Tensor], g: &Tensor) -> Result<(Tensor, Vec<Tensor>)> {
        Ok((window_maxpool_backward(x, self.k, self.k, g)?, Vec::new()))
    }
    fn kink_margins(&self, x: &Tensor, _p: &[Tensor]) -> Result<Option<Tensor>> {
        Ok(Some(crate::activations::maxpool_runner_up_gap(x, self.k, self.k)))
    }
}

pub struct AvgPoolTarget {
    pub k: usize,
}

impl CheckTarget for AvgPoolTarget {
    fn forward(&self, x: &Tensor, _p: &[Tensor]) -> Result<Tensor> {
        window_avgpool(x, self.k, self.k)
    }
    fn backward(&self, x: &Tensor, _p: &[Tensor], g: &Tensor) -> Result<(Tensor, Vec<Tensor>)> {
        Ok((window_avgpool_backward(x, self.k, self.k, g)?, Vec::new()))
    }
}

// ---- funnel variants ----------------------------------------------------

/// Funnel activation under a fixed config; the parameter list is the
/// canonical flattening of `FunnelParams`.
pub struct FreluTarget {
    cfg: FunnelConfig,
    template: FunnelParams,
}

impl CheckTarget for FreluTarget {
    fn forward(&self, x: &Tensor, p: &[Tensor]) -> Result<Tensor> {
        let params = self.template.unflatten(p)?;
        Ok(frelu_forward(x, &self.cfg, &params, Mode::Train)?.0)
    }
    fn backward(&self, x: &Tensor, p: &[Tensor], g: &Tensor) -> Result<(Tensor, Vec<Tensor>)> {
        let params = self.template.unflatten(p)?;
        let (_, cache) = frelu_forward(x, &self.cfg, &params, Mode::Train)?;
        let (gx, fg) = frelu_backward(x, &self.cfg, &params, &cache, g)?;
        Ok((gx, fg.flatten(&params)))
    }
    fn kink_margins(&self, x: &Tensor, p: &[Tensor]) -> Result<Option<Tensor>> {
        let params = self.template.unflatten(p)?;
        Ok(Some(frelu_margins(x, &self.cfg, &params, Mode::Train)?))
    }
    fn flip_sensitivity(&self, x: &Tensor, p: &[Tensor]) -> Result<f64> {
        let params = self.template.unflatten(p)?;
        frelu_flip_sensitivity(x, &self.cfg, &params, Mode::Train)
    }
}

pub fn frelu_target(cfg: &FunnelConfig, channels: usize, rng: &mut Rng) -> BuiltCheck {
    let template = FunnelParams::init(cfg, channels, rng).expect("funnel init");
    let params = template.flatten();
    BuiltCheck {
        target: Box::new(FreluTarget { cfg: *cfg, template }),
        params,
    }
}

pub struct DwThenReluTarget {
    cfg: FunnelConfig,
    template: FunnelParams,
}

impl CheckTarget for DwThenReluTarget {
    fn forward(&self, x: &Tensor, p: &[Tensor]) -> Result<Tensor> {
        let params = self.template.unflatten(p)?;
        Ok(dw_then_relu_forward(x, &self.cfg, &params, Mode::Train)?.0)
    }
    fn backward(&self, x: &Tensor, p: &[Tensor], g: &Tensor) -> Result<(Tensor, Vec<Tensor>)> {
        let params = self.template.unflatten(p)?;
        let (_, cache) = dw_then_relu_forward(x, &self.cfg, &params, Mode::Train)?;
        let (gx, fg) = dw_then_relu_backward(x, &self.cfg, &params, &cache, g)?;
        Ok((gx, fg.flatten(&params)))
    }
    fn kink_margins(&self, x: &Tensor, p: &[Tensor]) -> Result<Option<Tensor>> {
        let params = self.template.unflatten(p)?;
        Ok(Some(dw_then_relu_margins(x, &self.cfg, &params, Mode::Train)?))
    }
    fn flip_sensitivity(&self, x: &Tensor, p: &[Tensor]) -> Result<f64> {
        let params = self.template.unflatten(p)?;
        frelu_flip_sensitivity(x, &self.cfg, &params, Mode::Train)
    }
}

pub fn dw_then_relu_target(cfg: &FunnelConfig, channels: usize, rng: &mut Rng) -> BuiltCheck {
    let template = FunnelParams::init(cfg, channels, rng).expect("funnel init");
    let params = template.flatten();
    BuiltCheck {
        target: Box::new(DwThenReluTarget { cfg: *cfg, template }),
        params,
    }
}

// ---- named registry -------------------------------------------------------

/// Every op name `run_named_check` accepts.
pub const CHECKABLE_OPS: &[&str] = &[
    "relu",
    "prelu",
    "swish",
    "dwconv",
    "conv",
    "bn",
    "ln",
    "in",
    "gn",
    "maxpool",
    "avgpool",
    "frelu",
    "frelu-sum",
    "frelu-maxpool",
    "frelu-avgpool",
    "dwrelu",
    "pair-sum",
    "pair-max",
];

use crate::activations::{ConditionKind, Fusion, PairCombine, WindowSpec};
use crate::gradcheck::{check, CheckSettings, GradCheckReport};

/// Run the finite-difference check for a named op over several random input
/// shapes. Funnel variants honor `window` and `norm_kind`; the norm ops
/// ignore `window`.
pub fn run_named_check(
    op: &str,
    window: usize,
    norm_kind: NormKind,
    seed: u64,
    shapes: usize,
) -> Result<Vec<GradCheckReport>> {
    let mut rng = Rng::new(seed.wrapping_mul(0x9e37_79b9).wrapping_add(1));
    let mut reports = Vec::new();
    let funnel_cfg = |condition: ConditionKind, fusion: Fusion| FunnelConfig {
        window: WindowSpec::Square(window),
        fusion,
        condition_kind: condition,
        norm_kind,
        ..FunnelConfig::default()
    };
    let pair_cfg = |combine: PairCombine| FunnelConfig {
        window: WindowSpec::RowColPair,
        pair_combine: combine,
        norm_kind,
        ..FunnelConfig::default()
    };
    for _ in 0..shapes.max(1) {
        let n = 1 + rng.next_below(2);
        let c = 2 * (1 + rng.next_below(2)); // even, so group norm divides
        let h = 4 + rng.next_below(3);
        let w = 4 + rng.next_below(3);
        let x = Tensor::gaussian(n, c, h, w, 0.0, 1.0, &mut rng)?;
        let built: BuiltCheck = match op {
            "relu" => BuiltCheck { target: Box::new(ReluTarget), params: vec![] },
            "swish" => BuiltCheck { target: Box::new(SwishTarget), params: vec![] },
            "prelu" => {
                let slopes = Tensor::gaussian(1, c, 1, 1, 0.25, 0.2, &mut rng)?;
                BuiltCheck { target: Box::new(PReluTarget), params: vec![slopes] }
            }
            "dwconv" => {
                let weights = Tensor::gaussian(1, c, window, window, 0.0, 0.4, &mut rng)?;
                BuiltCheck { target: Box::new(DwConvTarget), params: vec![weights] }
            }
            "conv" => {
                let weights = Tensor::gaussian(3, c, 3, 3, 0.0, 0.4, &mut rng)?;
                let bias = Tensor::gaussian(1, 3, 1, 1, 0.0, 0.2, &mut rng)?;
                BuiltCheck {
                    target: Box::new(ConvTarget { stride: 1 + n % 2, padding: (1, 1) }),
                    params: vec![weights, bias],
                }
            }
            "bn" => norm_target(NormKind::Batch, c, &mut rng),
            "ln" => norm_target(NormKind::Layer, c, &mut rng),
            "in" => norm_target(NormKind::Instance, c, &mut rng),
            "gn" => norm_target(NormKind::Group(2), c, &mut rng),
            "maxpool" => BuiltCheck { target: Box::new(MaxPoolTarget { k: window }), params: vec![] },
            "avgpool" => BuiltCheck { target: Box::new(AvgPoolTarget { k: window }), params: vec![] },
            "frelu" => frelu_target(&funnel_cfg(ConditionKind::Parametric, Fusion::Max), c, &mut rng),
            "frelu-sum" => {
                frelu_target(&funnel_cfg(ConditionKind::Parametric, Fusion::Sum), c, &mut rng)
            }
            "frelu-maxpool" => {
                frelu_target(&funnel_cfg(ConditionKind::MaxPool, Fusion::Max), c, &mut rng)
            }
            "frelu-avgpool" => {
                frelu_target(&funnel_cfg(ConditionKind::AvgPool, Fusion::Max), c, &mut rng)
            }
            "dwrelu" => {
                dw_then_relu_target(&funnel_cfg(ConditionKind::Parametric, Fusion::Max), c, &mut rng)
            }
            "pair-sum" => frelu_target(&pair_cfg(PairCombine::Sum), c, &mut rng),
            "pair-max" => frelu_target(&pair_cfg(PairCombine::Max), c, &mut rng),
            other => {
                return Err(Error::InvalidArgument(format!("unknown gradcheck op '{other}'")))
            }
        };
        reports.push(check(built.target.as_ref(), &x, &built.params, CheckSettings::default())?);
    }
    Ok(reports)
}
