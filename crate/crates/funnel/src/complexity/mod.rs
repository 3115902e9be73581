//! Model descriptions with exact parameter and FLOP accounting.
//!
//! FLOPs are multiply-accumulates: a `k x k` convolution over `C_in`
//! channels producing `C_out x H x W` costs `C_in*C_out*k^2*H*W`, and a
//! depthwise window costs `C*k_h*k_w*H*W`. Norms, activations, and pooling
//! are excluded from the headline figure and tracked as separate elementwise
//! work. Parameters are counted two ways: `params_total` includes norm
//! affine vectors; `params_conv` (the figure comparable to published model
//! tables) excludes them. Both are exact integers.

mod models;
mod parse;

pub use models::{builtin, builtin_models, resnet, toy_cnn, toy_linear, ResNetVariant};

use crate::activations::{ActivationKind, ConditionKind, FunnelConfig, WindowSpec};
use crate::error::{Error, Result};
use crate::ops::NormKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoolKind {
    Max,
    Avg,
    GlobalAvg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Combine {
    Add,
    Concat,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LayerKind {
    Conv {
        c_out: usize,
        kh: usize,
        kw: usize,
        stride: usize,
        pad: (usize, usize),
        bias: bool,
    },
    DepthwiseConv {
        kh: usize,
        kw: usize,
        /// Optional declared channel count, cross-checked against the graph.
        channels: Option<usize>,
    },
    Norm {
        kind: NormKind,
        /// Optional declared channel count, cross-checked against the graph.
        channels: Option<usize>,
    },
    Activation(ActivationKind),
    Pool {
        kind: PoolKind,
        k: usize,
        stride: usize,
        pad: usize,
    },
    Linear {
        out: usize,
    },
    /// Opens a residual scope; the entry tensor feeds the shortcut.
    BlockStart,
    /// Switches from the main path back to the block entry.
    Shortcut,
    /// Merges main and shortcut paths.
    BlockEnd {
        combine: Combine,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerSpec {
    pub name: String,
    pub kind: LayerKind,
}

/// Ordered layer list plus the input shape it expects.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub name: String,
    /// (channels, height, width); batch is a runtime choice.
    pub input_shape: (usize, usize, usize),
    pub layers: Vec<LayerSpec>,
}

/// The shape (c, h, w) flowing out of each layer, in layer order.
pub type ShapeTrace = Vec<(usize, usize, usize)>;

impl ModelSpec {
    pub fn new(name: &str, input_shape: (usize, usize, usize)) -> ModelSpec {
        ModelSpec { name: name.into(), input_shape, layers: Vec::new() }
    }

    pub fn push(&mut self, name: &str, kind: LayerKind) {
        self.layers.push(LayerSpec { name: name.into(), kind });
    }

    /// Shape propagation. Returns the per-layer output shapes, or every
    /// problem found as a diagnostic list; never panics on bad input.
    pub fn validate(&self) -> std::result::Result<ShapeTrace, Vec<String>> {
        let mut diags = Vec::new();
        if self.layers.is_empty() {
            diags.push("empty model".to_string());
        }
        let (c0, h0, w0) = self.input_shape;
        if c0 == 0 || h0 == 0 || w0 == 0 {
            diags.push(format!("input shape has a zero dimension: {c0}x{h0}x{w0}"));
        }
        let mut cur = self.input_shape;
        // (entry shape, main-path output once `shortcut` was seen)
        let mut stack: Vec<((usize, usize, usize), Option<(usize, usize, usize)>)> = Vec::new();
        let mut trace = Vec::with_capacity(self.layers.len());

        for layer in &self.layers {
            let name = &layer.name;
            match &layer.kind {
                LayerKind::Conv { c_out, kh, kw, stride, pad, .. } => {
                    let (c, h, w) = cur;
                    let _ = c;
                    if h + 2 * pad.0 < *kh || w + 2 * pad.1 < *kw {
                        diags.push(format!(
                            "{name}: kernel {kh}x{kw} does not fit padded input {h}x{w}"
                        ));
                    } else {
                        cur = (
                            *c_out,
                            (h + 2 * pad.0 - kh) / stride + 1,
                            (w + 2 * pad.1 - kw) / stride + 1,
                        );
                    }
                }
                LayerKind::DepthwiseConv { kh, kw, channels } => {
                    if let Some(decl) = channels {
                        if *decl != cur.0 {
                            diags.push(format!(
                                "{name}: depthwise conv declares {decl} channels, graph carries {}",
                                cur.0
                            ));
                        }
                    }
                    if *kh % 2 == 0 || *kw % 2 == 0 {
                        diags.push(format!("{name}: window {kh}x{kw} must be odd"));
                    }
                    // same padding: shape preserved
                }
                LayerKind::Norm { kind, channels } => {
                    if let Some(decl) = channels {
                        if *decl != cur.0 {
                            diags.push(format!(
                                "{name}: norm declares {decl} channels, graph carries {}",
                                cur.0
                            ));
                        }
                    }
                    if let NormKind::Group(g) = kind {
                        if *g == 0 || cur.0 % g != 0 {
                            diags.push(format!(
                                "{name}: group norm needs channels divisible by groups ({} % {g})",
                                cur.0
                            ));
                        }
                    }
                }
                LayerKind::Activation(kind) => {
                    if let ActivationKind::FRelu(cfg) | ActivationKind::DwThenRelu(cfg) = kind {
                        if let Err(e) = cfg.validate() {
                            diags.push(format!("{name}: {e}"));
                        }
                    }
                }
                LayerKind::Pool { kind, k, stride, pad } => match kind {
                    PoolKind::GlobalAvg => {
                        cur = (cur.0, 1, 1);
                    }
                    _ => {
                        let (c, h, w) = cur;
                        if h + 2 * pad < *k || w + 2 * pad < *k {
                            diags.push(format!("{name}: pool window {k} does not fit {h}x{w}"));
                        } else {
                            cur = (c, (h + 2 * pad - k) / stride + 1, (w + 2 * pad - k) / stride + 1);
                        }
                    }
                },
                LayerKind::Linear { out } => {
                    cur = (*out, 1, 1);
                }
                LayerKind::BlockStart => {
                    stack.push((cur, None));
                }
                LayerKind::Shortcut => match stack.last_mut() {
                    Some((entry, main_out @ None)) => {
                        *main_out = Some(cur);
                        cur = *entry;
                    }
                    Some((_, Some(_))) => {
                        diags.push(format!("{name}: second shortcut in one block"));
                    }
                    None => diags.push(format!("{name}: shortcut outside a block")),
                },
                LayerKind::BlockEnd { combine } => match stack.pop() {
                    Some((entry, main_out)) => {
                        let main = main_out.unwrap_or(cur);
                        let short = if main_out.is_some() { cur } else { entry };
                        match combine {
                            Combine::Add => {
                                if main != short {
                                    diags.push(format!(
                                        "{name}: add merge of unequal shapes {main:?} vs {short:?}"
                                    ));
                                }
                                cur = main;
                            }
                            Combine::Concat => {
                                if (main.1, main.2) != (short.1, short.2) {
                                    diags.push(format!(
                                        "{name}: concat merge of unequal spatial {main:?} vs {short:?}"
                                    ));
                                }
                                cur = (main.0 + short.0, main.1, main.2);
                            }
                        }
                    }
                    None => diags.push(format!("{name}: end outside a block")),
                },
            }
            trace.push(cur);
        }
        if !stack.is_empty() {
            diags.push(format!("{} unterminated block(s)", stack.len()));
        }
        if diags.is_empty() {
            Ok(trace)
        } else {
            Err(diags)
        }
    }
}

/// One accounting row per layer.
#[derive(Debug, Clone)]
pub struct CountRow {
    pub name: String,
    pub label: String,
    pub out: (usize, usize, usize),
    /// Learnable parameters including norm affine vectors.
    pub params: u64,
    /// The norm-affine share of `params`.
    pub norm_params: u64,
    /// Multiply-accumulates.
    pub macs: u64,
    /// Elementwise work outside the MAC convention (informational).
    pub aux_ops: u64,
}

#[derive(Debug, Clone)]
pub struct CountReport {
    /// All learnable parameters (norm affine included).
    pub params_total: u64,
    /// Parameters excluding norm affine: the figure comparable to published
    /// complexity tables.
    pub params_conv: u64,
    /// Headline multiply-accumulate count.
    pub flops: u64,
    pub aux_ops: u64,
    pub rows: Vec<CountRow>,
}

impl CountReport {
    /// `25.5M` style rendering, rounded half away from zero at 0.1M.
    pub fn params_display(&self) -> String {
        format!("{:.1}M", (self.params_conv as f64) / 1e6)
    }

    /// `3.86G` style rendering at 0.01G.
    pub fn flops_display(&self) -> String {
        format!("{:.2}G", (self.flops as f64) / 1e9)
    }

    pub fn csv(&self) -> String {
        let mut out = String::from("layer,kind,out_c,out_h,out_w,params,norm_params,macs,aux_ops\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                r.name, r.label, r.out.0, r.out.1, r.out.2, r.params, r.norm_params, r.macs,
                r.aux_ops
            ));
        }
        out
    }
}

fn norm_affine_params(kind: NormKind, c: u64) -> u64 {
    match kind {
        NormKind::None => 0,
        _ => 2 * c,
    }
}

/// Window parameters and per-position MACs of a funnel condition.
fn funnel_cost(cfg: &FunnelConfig, c: u64, hw: u64) -> (u64, u64, u64, u64) {
    // (window params, norm params, macs, aux)
    match cfg.condition_kind {
        ConditionKind::MaxPool | ConditionKind::AvgPool => {
            let k = match cfg.window {
                WindowSpec::Square(k) => k as u64,
                WindowSpec::RowColPair => 3,
            };
            // window taps per position plus the fusion max
            (0, 0, 0, c * hw * (k * k + 1))
        }
        ConditionKind::Parametric => {
            let mut wparams = 0u64;
            let mut macs = 0u64;
            for (kh, kw) in cfg.branch_windows() {
                wparams += c * (kh * kw) as u64;
                macs += c * (kh * kw) as u64 * hw;
            }
            let norm_sites = if cfg.window == WindowSpec::RowColPair && cfg.shared_pair_norm {
                1
            } else {
                cfg.branch_windows().len() as u64
            };
            let nparams = norm_sites * norm_affine_params(cfg.norm_kind, c);
            let aux = c * hw * (1 + 4 * norm_sites); // fusion max + norm passes
            (wparams, nparams, macs, aux)
        }
    }
}

/// Full accounting walk. Requires a valid spec.
pub fn count(m: &ModelSpec) -> Result<CountReport> {
    let trace = m.validate().map_err(Error::Validation)?;
    let mut report = CountReport {
        params_total: 0,
        params_conv: 0,
        flops: 0,
        aux_ops: 0,
        rows: Vec::new(),
    };
    let mut cur = m.input_shape;
    for (layer, &out) in m.layers.iter().zip(&trace) {
        let (ic, _, _) = cur;
        let (oc, oh, ow) = out;
        let (mut params, mut norm_params, mut macs, mut aux) = (0u64, 0u64, 0u64, 0u64);
        let label: String = match &layer.kind {
            LayerKind::Conv { c_out, kh, kw, bias, .. } => {
                params = (ic * c_out * kh * kw) as u64 + if *bias { *c_out as u64 } else { 0 };
                macs = (ic * c_out * kh * kw) as u64 * (oh * ow) as u64;
                format!("conv{kh}x{kw}")
            }
            LayerKind::DepthwiseConv { kh, kw, .. } => {
                params = (ic * kh * kw) as u64;
                macs = (ic * kh * kw) as u64 * (oh * ow) as u64;
                format!("dwconv{kh}x{kw}")
            }
            LayerKind::Norm { kind, .. } => {
                norm_params = norm_affine_params(*kind, ic as u64);
                params = norm_params;
                aux = 4 * (ic * oh * ow) as u64;
                format!("norm-{}", kind.label())
            }
            LayerKind::Activation(kind) => {
                let chw = (ic * oh * ow) as u64;
                match kind {
                    ActivationKind::Relu | ActivationKind::Swish => {
                        aux = chw;
                    }
                    ActivationKind::PRelu => {
                        params = ic as u64;
                        aux = chw;
                    }
                    ActivationKind::FRelu(cfg) | ActivationKind::DwThenRelu(cfg) => {
                        let (wp, np, m_, a_) = funnel_cost(cfg, ic as u64, (oh * ow) as u64);
                        params = wp + np;
                        norm_params = np;
                        macs = m_;
                        aux = a_;
                    }
                }
                format!("act[{}]", kind.label())
            }
            LayerKind::Pool { kind, k, .. } => {
                let taps = match kind {
                    PoolKind::GlobalAvg => (cur.1 * cur.2) as u64,
                    _ => (k * k) as u64,
                };
                aux = (oc * oh * ow) as u64 * taps;
                match kind {
                    PoolKind::Max => format!("maxpool{k}"),
                    PoolKind::Avg => format!("avgpool{k}"),
                    PoolKind::GlobalAvg => "gavgpool".into(),
                }
            }
            LayerKind::Linear { out: o } => {
                let inputs = (ic * cur.1 * cur.2) as u64;
                params = inputs * *o as u64 + *o as u64;
                macs = inputs * *o as u64;
                "linear".into()
            }
            LayerKind::BlockStart => "block".into(),
            LayerKind::Shortcut => "shortcut".into(),
            LayerKind::BlockEnd { combine } => {
                if *combine == Combine::Add {
                    aux = (oc * oh * ow) as u64;
                }
                "end".into()
            }
        };
        report.params_total += params;
        report.params_conv += params - norm_params;
        report.flops += macs;
        report.aux_ops += aux;
        report.rows.push(CountRow {
            name: layer.name.clone(),
            label,
            out,
            params,
            norm_params,
            macs,
            aux_ops: aux,
        });
        cur = out;
    }
    Ok(report)
}

/// Total learnable parameters (norm affine included).
pub fn count_params(m: &ModelSpec) -> Result<u64> {
    Ok(count(m)?.params_total)
}

/// Headline multiply-accumulate count.
pub fn count_flops(m: &ModelSpec) -> Result<u64> {
    Ok(count(m)?.flops)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::activations::Fusion;

    fn single_conv(c_in: usize, c_out: usize, k: usize, bias: bool) -> ModelSpec {
        let mut m = ModelSpec::new("one-conv", (c_in, 56, 56));
        m.push(
            "c1",
            LayerKind::Conv { c_out, kh: k, kw: k, stride: 1, pad: ((k - 1) / 2, (k - 1) / 2), bias },
        );
        m
    }

    #[test]
    fn conv_param_count_is_weight_tensor_size() {
        let m = single_conv(64, 64, 3, false);
        assert_eq!(count_params(&m).unwrap(), 36_864);
        let m = single_conv(64, 64, 3, true);
        assert_eq!(count_params(&m).unwrap(), 36_864 + 64);
    }

    /// Dense-convolution MAC enumeration: literally iterate the loop nest
    /// over the zero-padded input and count one MAC per tap.
    fn enumerate_conv_macs(
        c_in: u64,
        c_out: u64,
        k: u64,
        h: u64,
        w: u64,
        stride: u64,
        pad: u64,
    ) -> u64 {
        let oh = (h + 2 * pad - k) / stride + 1;
        let ow = (w + 2 * pad - k) / stride + 1;
        let mut macs = 0u64;
        for _o in 0..c_out {
            for _i in 0..oh {
                for _j in 0..ow {
                    for _ci in 0..c_in {
                        for _di in 0..k {
                            for _dj in 0..k {
                                macs += 1;
                            }
                        }
                    }
                }
            }
        }
        macs
    }

    #[test]
    fn conv_flops_match_loop_enumeration() {
        let mut m = ModelSpec::new("flops", (2, 4, 4));
        m.push("c1", LayerKind::Conv { c_out: 2, kh: 3, kw: 3, stride: 1, pad: (1, 1), bias: false });
        assert_eq!(count_flops(&m).unwrap(), 576);
        assert_eq!(enumerate_conv_macs(2, 2, 3, 4, 4, 1, 1), 576);
    }

    #[test]
    fn funnel_addon_costs() {
        let mut m = ModelSpec::new("frelu-site", (64, 56, 56));
        m.push("a1", LayerKind::Activation(ActivationKind::FRelu(FunnelConfig::default())));
        let report = count(&m).unwrap();
        // 64 channels, 3x3 window: 576 window params plus 128 norm affine
        assert_eq!(report.params_total, 576 + 128);
        assert_eq!(report.params_conv, 576);
        assert_eq!(report.flops, 64 * 9 * 56 * 56);
        assert_eq!(report.flops, 1_806_336);
    }

    #[test]
    fn pooled_condition_costs_nothing() {
        for kind in [ConditionKind::MaxPool, ConditionKind::AvgPool] {
            let cfg = FunnelConfig { condition_kind: kind, ..FunnelConfig::default() };
            let mut m = ModelSpec::new("pooled", (32, 8, 8));
            m.push("a1", LayerKind::Activation(ActivationKind::FRelu(cfg)));
            let report = count(&m).unwrap();
            assert_eq!(report.params_total, 0);
            assert_eq!(report.flops, 0);
        }
    }

    #[test]
    fn pair_window_costs() {
        let cfg = FunnelConfig {
            window: WindowSpec::RowColPair,
            fusion: Fusion::Max,
            ..FunnelConfig::default()
        };
        let mut m = ModelSpec::new("pair", (16, 10, 10));
        m.push("a1", LayerKind::Activation(ActivationKind::FRelu(cfg)));
        let report = count(&m).unwrap();
        assert_eq!(report.params_conv, 16 * 3 + 16 * 3);
        assert_eq!(report.params_total, 16 * 6 + 2 * 32); // one norm per branch
        assert_eq!(report.flops, (16 * 3 + 16 * 3) * 100);
    }

    #[test]
    fn validation_diagnostics() {
        let empty = ModelSpec::new("empty", (1, 8, 8));
        let diags = empty.validate().unwrap_err();
        assert!(diags.iter().any(|d| d.contains("empty model")));

        let mut bad_dw = ModelSpec::new("bad-dw", (3, 8, 8));
        bad_dw.push("dw1", LayerKind::DepthwiseConv { kh: 3, kw: 3, channels: Some(4) });
        let diags = bad_dw.validate().unwrap_err();
        assert!(diags.iter().any(|d| d.contains("dw1")), "{diags:?}");

        let mut ok = ModelSpec::new("ok", (3, 8, 8));
        ok.push("c1", LayerKind::Conv { c_out: 64, kh: 3, kw: 3, stride: 1, pad: (1, 1), bias: false });
        assert!(ok.validate().is_ok());
    }

    #[test]
    fn block_shape_rules() {
        let mut m = ModelSpec::new("res", (8, 8, 8));
        m.push("b", LayerKind::BlockStart);
        m.push("c1", LayerKind::Conv { c_out: 8, kh: 3, kw: 3, stride: 1, pad: (1, 1), bias: false });
        m.push("e", LayerKind::BlockEnd { combine: Combine::Add });
        assert!(m.validate().is_ok());

        // channel change without a projection shortcut cannot add-merge
        let mut bad = ModelSpec::new("res-bad", (8, 8, 8));
        bad.push("b", LayerKind::BlockStart);
        bad.push("c1", LayerKind::Conv { c_out: 16, kh: 3, kw: 3, stride: 1, pad: (1, 1), bias: false });
        bad.push("e", LayerKind::BlockEnd { combine: Combine::Add });
        let diags = bad.validate().unwrap_err();
        assert!(diags.iter().any(|d| d.contains("unequal shapes")));

        // with a projection on the shortcut path it is fine
        let mut proj = ModelSpec::new("res-proj", (8, 8, 8));
        proj.push("b", LayerKind::BlockStart);
        proj.push("c1", LayerKind::Conv { c_out: 16, kh: 3, kw: 3, stride: 1, pad: (1, 1), bias: false });
        proj.push("s", LayerKind::Shortcut);
        proj.push("p", LayerKind::Conv { c_out: 16, kh: 1, kw: 1, stride: 1, pad: (0, 0), bias: false });
        proj.push("e", LayerKind::BlockEnd { combine: Combine::Add });
        assert!(proj.validate().is_ok());
    }
}
