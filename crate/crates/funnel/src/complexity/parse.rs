//! Line-oriented model description format.
//!
//! One layer per line, `<name> <kind> key=value ...`; `#` starts a comment.
//! `input CxHxW` declares the input shape. Residual scopes are expressed as
//! `<name> block`, an optional `<name> shortcut` switching to the shortcut
//! path, and `<name> end [combine=add|concat]`. The exact grammar is in the
//! repository README; `to_text` emits it and `parse` accepts it bit-exactly.

use std::collections::BTreeMap;

use crate::activations::{ActivationKind, ConditionKind, FunnelConfig, Fusion, PairCombine, WindowSpec};
use crate::error::{Error, Result};
use crate::ops::NormKind;

use super::{Combine, LayerKind, ModelSpec, PoolKind};

fn err(line_no: usize, msg: impl std::fmt::Display) -> Error {
    Error::Config(format!("line {line_no}: {msg}"))
}

fn parse_dims(token: &str) -> Option<(usize, usize, usize)> {
    let parts: Vec<&str> = token.split('x').collect();
    if parts.len() != 3 {
        return None;
    }
    let c = parts[0].parse().ok()?;
    let h = parts[1].parse().ok()?;
    let w = parts[2].parse().ok()?;
    Some((c, h, w))
}

struct Keys {
    line_no: usize,
    map: BTreeMap<String, String>,
}

impl Keys {
    fn new(line_no: usize, tokens: &[&str]) -> Result<Keys> {
        let mut map = BTreeMap::new();
        for t in tokens {
            let (k, v) = t
                .split_once('=')
                .ok_or_else(|| err(line_no, format!("expected key=value, got '{t}'")))?;
            if map.insert(k.to_string(), v.to_string()).is_some() {
                return Err(err(line_no, format!("duplicate key '{k}'")));
            }
        }
        Ok(Keys { line_no, map })
    }

    fn take(&mut self, key: &str) -> Option<String> {
        self.map.remove(key)
    }

    fn take_usize(&mut self, key: &str) -> Result<Option<usize>> {
        match self.take(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|_| err(self.line_no, format!("{key}={v} is not an integer"))),
        }
    }

    fn take_f64(&mut self, key: &str) -> Result<Option<f64>> {
        match self.take(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|_| err(self.line_no, format!("{key}={v} is not a number"))),
        }
    }

    fn take_bool(&mut self, key: &str) -> Result<Option<bool>> {
        match self.take(key).as_deref() {
            None => Ok(None),
            Some("0") => Ok(Some(false)),
            Some("1") => Ok(Some(true)),
            Some(v) => Err(err(self.line_no, format!("{key}={v} must be 0 or 1"))),
        }
    }

    fn require_usize(&mut self, key: &str) -> Result<usize> {
        self.take_usize(key)?
            .ok_or_else(|| err(self.line_no, format!("missing required key '{key}'")))
    }

    fn finish(self) -> Result<()> {
        if let Some(k) = self.map.keys().next() {
            return Err(err(self.line_no, format!("unknown key '{k}'")));
        }
        Ok(())
    }
}

fn parse_norm_kind(line_no: usize, v: &str, keys: &mut Keys) -> Result<NormKind> {
    Ok(match v {
        "bn" => NormKind::Batch,
        "ln" => NormKind::Layer,
        "in" => NormKind::Instance,
        "gn" => NormKind::Group(keys.require_usize("groups")?),
        "none" => NormKind::None,
        other => return Err(err(line_no, format!("unknown norm kind '{other}'"))),
    })
}

fn parse_window(line_no: usize, keys: &mut Keys) -> Result<(usize, usize)> {
    if let Some(k) = keys.take_usize("k")? {
        return Ok((k, k));
    }
    let kh = keys.take_usize("kh")?;
    let kw = keys.take_usize("kw")?;
    match (kh, kw) {
        (Some(kh), Some(kw)) => Ok((kh, kw)),
        _ => Err(err(line_no, "need k= or both kh= and kw=")),
    }
}

fn parse_funnel_config(line_no: usize, keys: &mut Keys) -> Result<FunnelConfig> {
    let mut cfg = FunnelConfig::default();
    if let Some(w) = keys.take("window") {
        cfg.window = if w == "pair" {
            WindowSpec::RowColPair
        } else {
            let k = w
                .parse()
                .map_err(|_| err(line_no, format!("window={w} must be an odd size or 'pair'")))?;
            WindowSpec::Square(k)
        };
    }
    if let Some(f) = keys.take("fusion") {
        cfg.fusion = match f.as_str() {
            "max" => Fusion::Max,
            "sum" => Fusion::Sum,
            other => return Err(err(line_no, format!("fusion={other} must be max or sum"))),
        };
    }
    if let Some(c) = keys.take("cond") {
        cfg.condition_kind = match c.as_str() {
            "param" => ConditionKind::Parametric,
            "maxpool" => ConditionKind::MaxPool,
            "avgpool" => ConditionKind::AvgPool,
            other => return Err(err(line_no, format!("unknown condition '{other}'"))),
        };
    }
    if let Some(n) = keys.take("norm") {
        cfg.norm_kind = parse_norm_kind(line_no, &n, keys)?;
    }
    if let Some(p) = keys.take("combine") {
        cfg.pair_combine = match p.as_str() {
            "max" => PairCombine::Max,
            "sum" => PairCombine::Sum,
            other => return Err(err(line_no, format!("combine={other} must be max or sum"))),
        };
    }
    if let Some(s) = keys.take_bool("shared_norm")? {
        cfg.shared_pair_norm = s;
    }
    if let Some(s) = keys.take_f64("init_std")? {
        cfg.init_std = s;
    }
    Ok(cfg)
}

impl ModelSpec {
    /// Parse a model description. Problems are reported with line numbers.
    pub fn parse(name: &str, text: &str) -> Result<ModelSpec> {
        let mut m = ModelSpec::new(name, (0, 0, 0));
        let mut saw_input = false;
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let tokens: Vec<&str> = line.split_whitespace().collect();
            if tokens[0] == "input" {
                if tokens.len() != 2 {
                    return Err(err(line_no, "input expects one CxHxW argument"));
                }
                m.input_shape = parse_dims(tokens[1])
                    .ok_or_else(|| err(line_no, format!("bad input shape '{}'", tokens[1])))?;
                saw_input = true;
                continue;
            }
            if tokens.len() < 2 {
                return Err(err(line_no, "expected '<name> <kind> [key=value ...]'"));
            }
            let lname = tokens[0];
            let kind_tok = tokens[1];
            let mut keys = Keys::new(line_no, &tokens[2..])?;
            let kind = match kind_tok {
                "conv" => {
                    let c_out = keys.require_usize("out")?;
                    let (kh, kw) = parse_window(line_no, &mut keys)?;
                    let stride = keys.take_usize("stride")?.unwrap_or(1);
                    let pad = match keys.take("pad").as_deref() {
                        Some("same") | None => {
                            if kh % 2 == 0 || kw % 2 == 0 {
                                return Err(err(line_no, "pad=same needs an odd kernel"));
                            }
                            ((kh - 1) / 2, (kw - 1) / 2)
                        }
                        Some(v) => {
                            let p: usize = v.parse().map_err(|_| {
                                err(line_no, format!("pad={v} must be an integer or 'same'"))
                            })?;
                            (p, p)
                        }
                    };
                    let bias = keys.take_bool("bias")?.unwrap_or(false);
                    LayerKind::Conv { c_out, kh, kw, stride, pad, bias }
                }
                "dwconv" => {
                    let (kh, kw) = parse_window(line_no, &mut keys)?;
                    let channels = keys.take_usize("c")?;
                    LayerKind::DepthwiseConv { kh, kw, channels }
                }
                "norm" => {
                    let kind_v = keys
                        .take("kind")
                        .ok_or_else(|| err(line_no, "norm needs kind="))?;
                    let kind = parse_norm_kind(line_no, &kind_v, &mut keys)?;
                    let channels = keys.take_usize("c")?;
                    LayerKind::Norm { kind, channels }
                }
                "act" => {
                    let kind_v = keys
                        .take("kind")
                        .ok_or_else(|| err(line_no, "act needs kind="))?;
                    let act = match kind_v.as_str() {
                        "relu" => ActivationKind::Relu,
                        "prelu" => ActivationKind::PRelu,
                        "swish" => ActivationKind::Swish,
                        "frelu" => ActivationKind::FRelu(parse_funnel_config(line_no, &mut keys)?),
                        "dwrelu" => {
                            ActivationKind::DwThenRelu(parse_funnel_config(line_no, &mut keys)?)
                        }
                        other => return Err(err(line_no, format!("unknown activation '{other}'"))),
                    };
                    LayerKind::Activation(act)
                }
                "pool" => {
                    let kind_v = keys
                        .take("kind")
                        .ok_or_else(|| err(line_no, "pool needs kind="))?;
                    let kind = match kind_v.as_str() {
                        "max" => PoolKind::Max,
                        "avg" => PoolKind::Avg,
                        "gavg" => PoolKind::GlobalAvg,
                        other => return Err(err(line_no, format!("unknown pool kind '{other}'"))),
                    };
                    let k = keys.take_usize("k")?.unwrap_or(1);
                    let stride = keys.take_usize("stride")?.unwrap_or(1);
                    let pad = keys.take_usize("pad")?.unwrap_or(0);
                    LayerKind::Pool { kind, k, stride, pad }
                }
                "linear" => LayerKind::Linear { out: keys.require_usize("out")? },
                "block" => LayerKind::BlockStart,
                "shortcut" => LayerKind::Shortcut,
                "end" => {
                    let combine = match keys.take("combine").as_deref() {
                        Some("add") | None => Combine::Add,
                        Some("concat") => Combine::Concat,
                        Some(v) => {
                            return Err(err(line_no, format!("combine={v} must be add or concat")))
                        }
                    };
                    LayerKind::BlockEnd { combine }
                }
                other => return Err(err(line_no, format!("unknown layer kind '{other}'"))),
            };
            keys.finish()?;
            m.push(lname, kind);
        }
        if !saw_input {
            return Err(Error::Config("model file must declare 'input CxHxW'".into()));
        }
        Ok(m)
    }

    /// Emit the description in the same grammar `parse` accepts.
    pub fn to_text(&self) -> String {
        let mut out = format!(
            "input {}x{}x{}\n",
            self.input_shape.0, self.input_shape.1, self.input_shape.2
        );
        for layer in &self.layers {
            let name = &layer.name;
            let line = match &layer.kind {
                LayerKind::Conv { c_out, kh, kw, stride, pad, bias } => {
                    let k = if kh == kw {
                        format!("k={kh}")
                    } else {
                        format!("kh={kh} kw={kw}")
                    };
                    format!(
                        "{name} conv out={c_out} {k} stride={stride} pad={} bias={}",
                        pad.0,
                        u8::from(*bias)
                    )
                }
                LayerKind::DepthwiseConv { kh, kw, channels } => {
                    let k = if kh == kw {
                        format!("k={kh}")
                    } else {
                        format!("kh={kh} kw={kw}")
                    };
                    match channels {
                        Some(c) => format!("{name} dwconv {k} c={c}"),
                        None => format!("{name} dwconv {k}"),
                    }
                }
                LayerKind::Norm { kind, channels } => {
                    let mut s = format!("{name} norm kind={}", norm_text(kind));
                    if let Some(c) = channels {
                        s.push_str(&format!(" c={c}"));
                    }
                    s
                }
                LayerKind::Activation(act) => match act {
                    ActivationKind::Relu => format!("{name} act kind=relu"),
                    ActivationKind::PRelu => format!("{name} act kind=prelu"),
                    ActivationKind::Swish => format!("{name} act kind=swish"),
                    ActivationKind::FRelu(cfg) => {
                        format!("{name} act kind=frelu {}", funnel_text(cfg))
                    }
                    ActivationKind::DwThenRelu(cfg) => {
                        format!("{name} act kind=dwrelu {}", funnel_text(cfg))
                    }
                },
                LayerKind::Pool { kind, k, stride, pad } => {
                    let kv = match kind {
                        PoolKind::Max => "max",
                        PoolKind::Avg => "avg",
                        PoolKind::GlobalAvg => "gavg",
                    };
                    format!("{name} pool kind={kv} k={k} stride={stride} pad={pad}")
                }
                LayerKind::Linear { out: o } => format!("{name} linear out={o}"),
                LayerKind::BlockStart => format!("{name} block"),
                LayerKind::Shortcut => format!("{name} shortcut"),
                LayerKind::BlockEnd { combine } => {
                    let cv = match combine {
                        Combine::Add => "add",
                        Combine::Concat => "concat",
                    };
                    format!("{name} end combine={cv}")
                }
            };
            out.push_str(&line);
            out.push('\n');
        }
        out
    }
}

fn norm_text(kind: &NormKind) -> String {
    match kind {
        NormKind::Batch => "bn".into(),
        NormKind::Layer => "ln".into(),
        NormKind::Instance => "in".into(),
        NormKind::Group(g) => format!("gn groups={g}"),
        NormKind::None => "none".into(),
    }
}

fn funnel_text(cfg: &FunnelConfig) -> String {
    let window = match cfg.window {
        WindowSpec::Square(k) => k.to_string(),
        WindowSpec::RowColPair => "pair".into(),
    };
    let fusion = match cfg.fusion {
        Fusion::Max => "max",
        Fusion::Sum => "sum",
    };
    let cond = match cfg.condition_kind {
        ConditionKind::Parametric => "param",
        ConditionKind::MaxPool => "maxpool",
        ConditionKind::AvgPool => "avgpool",
    };
    let combine = match cfg.pair_combine {
        PairCombine::Max => "max",
        PairCombine::Sum => "sum",
    };
    format!(
        "window={window} fusion={fusion} cond={cond} norm={} combine={combine} shared_norm={} init_std={}",
        norm_text(&cfg.norm_kind),
        u8::from(cfg.shared_pair_norm),
        cfg.init_std
    )
}
