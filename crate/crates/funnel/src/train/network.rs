//! Runnable networks built from model descriptions: sequential stacks of
//! conv / norm / activation / global-average-pool / linear layers with exact
//! backward passes and a canonical parameter ordering shared by the
//! optimizer and checkpoints.

use crate::activations::{ActCache, ActivationLayer, FunnelParams};
use crate::complexity::{LayerKind, ModelSpec, PoolKind};
use crate::error::{Error, Result};
use crate::ops::{
    conv_backward, conv_forward, global_avgpool, global_avgpool_backward, norm_backward,
    norm_forward, ConvParams, Mode, NormCache, NormKind, NormParams,
};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// What a parameter is, for weight-decay policy.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamClass {
    Weight,
    Bias,
    Norm,
    Activation,
}

enum RtLayer {
    Conv(ConvParams),
    Norm(NormParams),
    Act(ActivationLayer),
    GlobalAvgPool,
    Linear { weights: Tensor, bias: Vec<f64> },
}

pub struct Network {
    pub spec: ModelSpec,
    layers: Vec<(String, RtLayer)>,
}

/// Per-layer forward intermediates for the backward pass.
pub struct Trace {
    inputs: Vec<Tensor>,
    caches: Vec<Cache>,
    /// Updated running stats for standalone norm layers, train mode only.
    running: Vec<Option<(Vec<f64>, Vec<f64>)>>,
    pub output: Tensor,
}

enum Cache {
    None,
    Norm(NormCache),
    Act(ActCache),
}

/// Named gradients in the same canonical order as `visit_params`.
pub type NamedGrads = Vec<(String, Vec<f64>)>;

/// Names of the flattened funnel parameter tensors, mirroring
/// `FunnelParams::flatten` order.
fn funnel_param_names(params: &FunnelParams) -> Vec<String> {
    let mut names = Vec::new();
    for (b, branch) in params.branches.iter().enumerate() {
        names.push(format!("window{b}"));
        if branch.norm.kind != NormKind::None && branch.norm.affine {
            names.push(format!("gamma{b}"));
            names.push(format!("beta{b}"));
        }
    }
    if let Some(sn) = &params.shared_norm {
        if sn.kind != NormKind::None && sn.affine {
            names.push("shared_gamma".into());
            names.push("shared_beta".into());
        }
    }
    names
}

impl Network {
    /// Instantiate a sequential model: He-initialized convolutions, unit
    /// norms, gaussian window activations. Residual blocks and windowed
    /// pooling layers are counting-only and rejected here.
    pub fn build(spec: &ModelSpec, rng: &mut Rng) -> Result<Network> {
        let trace = spec.validate().map_err(Error::Validation)?;
        let mut layers = Vec::new();
        let mut cur = spec.input_shape;
        for (layer, &out) in spec.layers.iter().zip(&trace) {
            let name = layer.name.clone();
            let rt = match &layer.kind {
                LayerKind::Conv { c_out, kh, kw, stride, pad, bias } => {
                    let fan_in = (cur.0 * kh * kw) as f64;
                    let std = (2.0 / fan_in).sqrt();
                    let weights = Tensor::gaussian(*c_out, cur.0, *kh, *kw, 0.0, std, rng)?;
                    let bias = bias.then(|| vec![0.0; *c_out]);
                    RtLayer::Conv(ConvParams::new(weights, bias, *stride, *pad)?)
                }
                LayerKind::Norm { kind, .. } => RtLayer::Norm(NormParams::new(*kind, cur.0)),
                LayerKind::Activation(kind) => {
                    RtLayer::Act(ActivationLayer::init(kind.clone(), cur.0, rng)?)
                }
                LayerKind::Pool { kind: PoolKind::GlobalAvg, .. } => RtLayer::GlobalAvgPool,
                LayerKind::Linear { out: o } => {
                    let fan_in = cur.0 * cur.1 * cur.2;
                    let std = (1.0 / fan_in as f64).sqrt();
                    let weights = Tensor::gaussian(*o, fan_in, 1, 1, 0.0, std, rng)?;
                    RtLayer::Linear { weights, bias: vec![0.0; *o] }
                }
                other => {
                    return Err(Error::Config(format!(
                        "{name}: layer {other:?} is not buildable in the training harness"
                    )))
                }
            };
            layers.push((name, rt));
            cur = out;
        }
        Ok(Network { spec: spec.clone(), layers })
    }

    pub fn forward(&self, x: &Tensor, mode: Mode) -> Result<Trace> {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut running = Vec::with_capacity(self.layers.len());
        let mut cur = x.clone();
        for (_, layer) in &self.layers {
            inputs.push(cur.clone());
            let (next, cache, run) = match layer {
                RtLayer::Conv(p) => (conv_forward(&cur, p)?, Cache::None, None),
                RtLayer::Norm(p) => {
                    let out = norm_forward(&cur, p, mode)?;
                    (out.y, Cache::Norm(out.cache), out.running)
                }
                RtLayer::Act(a) => {
                    let (y, cache) = a.forward(&cur, mode)?;
                    (y, Cache::Act(cache), None)
                }
                RtLayer::GlobalAvgPool => (global_avgpool(&cur)?, Cache::None, None),
                RtLayer::Linear { weights, bias } => {
                    (linear_forward(&cur, weights, bias)?, Cache::None, None)
                }
            };
            caches.push(cache);
            running.push(run);
            cur = next;
        }
        Ok(Trace { inputs, caches, running, output: cur })
    }

    /// Gradients w.r.t. the input and every learnable parameter, in the
    /// canonical `visit_params` order.
    pub fn backward(&self, trace: &Trace, grad_out: &Tensor) -> Result<(Tensor, NamedGrads)> {
        let mut grads_rev: Vec<(String, Vec<f64>)> = Vec::new();
        let mut g = grad_out.clone();
        for (i, (name, layer)) in self.layers.iter().enumerate().rev() {
            let x = &trace.inputs[i];
            match layer {
                RtLayer::Conv(p) => {
                    let out = conv_backward(x, p, &g)?;
                    if let Some(gb) = out.grad_bias {
                        grads_rev.push((format!("{name}.bias"), gb));
                    }
                    grads_rev.push((format!("{name}.weight"), out.grad_weights.data().to_vec()));
                    g = out.grad_x;
                }
                RtLayer::Norm(p) => {
                    let Cache::Norm(cache) = &trace.caches[i] else {
                        return Err(Error::State(format!("{name}: missing norm cache")));
                    };
                    let out = norm_backward(p, cache, &g)?;
                    if p.kind != NormKind::None && p.affine {
                        grads_rev.push((format!("{name}.beta"), out.grad_beta));
                        grads_rev.push((format!("{name}.gamma"), out.grad_gamma));
                    }
                    g = out.grad_x;
                }
                RtLayer::Act(a) => {
                    let Cache::Act(cache) = &trace.caches[i] else {
                        return Err(Error::State(format!("{name}: missing activation cache")));
                    };
                    let (gx, ag) = a.backward(x, cache, &g)?;
                    if !a.slopes.is_empty() {
                        grads_rev.push((format!("{name}.slopes"), ag.slopes));
                    }
                    if let (Some(fp), Some(fg)) = (&a.funnel, &ag.funnel) {
                        let tensors = fg.flatten(fp);
                        let names = funnel_param_names(fp);
                        for (pname, t) in names.into_iter().zip(tensors).rev() {
                            grads_rev.push((format!("{name}.{pname}"), t.data().to_vec()));
                        }
                    }
                    g = gx;
                }
                RtLayer::GlobalAvgPool => {
                    g = global_avgpool_backward(x, &g)?;
                }
                RtLayer::Linear { weights, bias } => {
                    let (gx, gw, gb) = linear_backward(x, weights, bias, &g)?;
                    grads_rev.push((format!("{name}.bias"), gb));
                    grads_rev.push((format!("{name}.weight"), gw));
                    g = gx;
                }
            }
        }
        grads_rev.reverse();
        Ok((g, grads_rev))
    }

    /// Fold updated running statistics from a train-mode trace into the
    /// network's norm layers.
    pub fn apply_running(&mut self, trace: &Trace) {
        for (i, (_, layer)) in self.layers.iter_mut().enumerate() {
            match layer {
                RtLayer::Norm(p) => {
                    if let Some((rm, rv)) = &trace.running[i] {
                        p.running_mean = rm.clone();
                        p.running_var = rv.clone();
                    }
                }
                RtLayer::Act(a) => {
                    if let Cache::Act(cache) = &trace.caches[i] {
                        a.apply_running(cache);
                    }
                }
                _ => {}
            }
        }
    }

    /// Walk every learnable parameter in canonical (layer, slot) order.
    pub fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, ParamClass, &mut [f64])) {
        for (name, layer) in self.layers.iter_mut() {
            match layer {
                RtLayer::Conv(p) => {
                    f(&format!("{name}.weight"), ParamClass::Weight, p.weights.data_mut());
                    if let Some(b) = p.bias.as_mut() {
                        f(&format!("{name}.bias"), ParamClass::Bias, b);
                    }
                }
                RtLayer::Norm(p) => {
                    if p.kind != NormKind::None && p.affine {
                        f(&format!("{name}.gamma"), ParamClass::Norm, &mut p.gamma);
                        f(&format!("{name}.beta"), ParamClass::Norm, &mut p.beta);
                    }
                }
                RtLayer::Act(a) => {
                    if !a.slopes.is_empty() {
                        f(&format!("{name}.slopes"), ParamClass::Activation, &mut a.slopes);
                    }
                    if let Some(fp) = a.funnel.as_mut() {
                        let names = funnel_param_names(fp);
                        let mut idx = 0usize;
                        for b in fp.branches.iter_mut() {
                            f(
                                &format!("{name}.{}", names[idx]),
                                ParamClass::Activation,
                                b.window.weights.data_mut(),
                            );
                            idx += 1;
                            if b.norm.kind != NormKind::None && b.norm.affine {
                                f(&format!("{name}.{}", names[idx]), ParamClass::Activation, &mut b.norm.gamma);
                                idx += 1;
                                f(&format!("{name}.{}", names[idx]), ParamClass::Activation, &mut b.norm.beta);
                                idx += 1;
                            }
                        }
                        if let Some(sn) = fp.shared_norm.as_mut() {
                            if sn.kind != NormKind::None && sn.affine {
                                f(&format!("{name}.shared_gamma"), ParamClass::Activation, &mut sn.gamma);
                                f(&format!("{name}.shared_beta"), ParamClass::Activation, &mut sn.beta);
                            }
                        }
                    }
                }
                RtLayer::GlobalAvgPool => {}
                RtLayer::Linear { weights, bias } => {
                    f(&format!("{name}.weight"), ParamClass::Weight, weights.data_mut());
                    f(&format!("{name}.bias"), ParamClass::Bias, bias);
                }
            }
        }
    }

    /// Named copies of every learnable parameter, canonical order.
    pub fn named_params(&mut self) -> Vec<(String, ParamClass, Vec<f64>)> {
        let mut out = Vec::new();
        self.visit_params_mut(&mut |name, class, data| {
            out.push((name.to_string(), class, data.to_vec()));
        });
        out
    }

    /// Total learnable coordinates; agrees with the complexity counter.
    pub fn param_count(&mut self) -> u64 {
        let mut total = 0u64;
        self.visit_params_mut(&mut |_, _, data| total += data.len() as u64);
        total
    }

    /// Entire mutable state as named tensors: `param.<name>` for learnable
    /// parameters and `buffer.<name>` for batch-norm running statistics.
    pub fn named_state(&mut self) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        self.visit_params_mut(&mut |name, _, data| {
            out.push((
                format!("param.{name}"),
                Tensor::from_vec(1, data.len(), 1, 1, data.to_vec()).expect("param tensor"),
            ));
        });
        for (name, layer) in self.layers.iter() {
            let push_running = |tag: &str, rm: &[f64], rv: &[f64], out: &mut Vec<(String, Tensor)>| {
                out.push((
                    format!("buffer.{name}.{tag}running_mean"),
                    Tensor::from_vec(1, rm.len(), 1, 1, rm.to_vec()).expect("buffer tensor"),
                ));
                out.push((
                    format!("buffer.{name}.{tag}running_var"),
                    Tensor::from_vec(1, rv.len(), 1, 1, rv.to_vec()).expect("buffer tensor"),
                ));
            };
            match layer {
                RtLayer::Norm(p) if p.kind == NormKind::Batch => {
                    push_running("", &p.running_mean, &p.running_var, &mut out);
                }
                RtLayer::Act(a) => {
                    if let Some(fp) = &a.funnel {
                        for (b, branch) in fp.branches.iter().enumerate() {
                            if branch.norm.kind == NormKind::Batch {
                                push_running(
                                    &format!("b{b}."),
                                    &branch.norm.running_mean,
                                    &branch.norm.running_var,
                                    &mut out,
                                );
                            }
                        }
                        if let Some(sn) = &fp.shared_norm {
                            if sn.kind == NormKind::Batch {
                                push_running("shared.", &sn.running_mean, &sn.running_var, &mut out);
                            }
                        }
                    }
                }
                _ => {}
            }
        }
        out
    }

    /// Restore state captured by `named_state`. Every entry must match an
    /// existing slot of the same length.
    pub fn load_state(&mut self, entries: &[(String, Tensor)]) -> Result<()> {
        use std::collections::HashMap;
        let mut map: HashMap<&str, &Tensor> =
            entries.iter().map(|(n, t)| (n.as_str(), t)).collect();
        let mut missing = Vec::new();
        self.visit_params_mut(&mut |name, _, data| {
            let key = format!("param.{name}");
            match map.remove(key.as_str()) {
                Some(t) if t.len() == data.len() => data.copy_from_slice(t.data()),
                Some(_) => missing.push(format!("{key}: length mismatch")),
                None => missing.push(format!("{key}: absent")),
            }
        });
        // running buffers
        let current = self.named_state();
        let buffer_names: Vec<String> = current
            .iter()
            .filter(|(n, _)| n.starts_with("buffer."))
            .map(|(n, _)| n.clone())
            .collect();
        let mut buffer_values: HashMap<String, Vec<f64>> = HashMap::new();
        for name in &buffer_names {
            match map.remove(name.as_str()) {
                Some(t) => {
                    buffer_values.insert(name.clone(), t.data().to_vec());
                }
                None => missing.push(format!("{name}: absent")),
            }
        }
        if !missing.is_empty() {
            return Err(Error::State(format!("checkpoint mismatch: {}", missing.join(", "))));
        }
        if let Some((name, _)) = map.into_iter().next() {
            return Err(Error::State(format!("checkpoint has unknown entry {name}")));
        }
        self.write_buffers(&buffer_values)?;
        Ok(())
    }

    fn write_buffers(&mut self, values: &std::collections::HashMap<String, Vec<f64>>) -> Result<()> {
        for (name, layer) in self.layers.iter_mut() {
            let pull = |tag: &str, rm: &mut Vec<f64>, rv: &mut Vec<f64>| -> Result<()> {
                if let Some(v) = values.get(&format!("buffer.{name}.{tag}running_mean")) {
                    if v.len() != rm.len() {
                        return Err(Error::State(format!("{name}: running_mean length mismatch")));
                    }
                    rm.copy_from_slice(v);
                }
                if let Some(v) = values.get(&format!("buffer.{name}.{tag}running_var")) {
                    if v.len() != rv.len() {
                        return Err(Error::State(format!("{name}: running_var length mismatch")));
                    }
                    rv.copy_from_slice(v);
                }
                Ok(())
            };
            match layer {
                RtLayer::Norm(p) if p.kind == NormKind::Batch => {
                    pull("", &mut p.running_mean, &mut p.running_var)?;
                }
                RtLayer::Act(a) => {
                    if let Some(fp) = a.funnel.as_mut() {
                        for (b, branch) in fp.branches.iter_mut().enumerate() {
                            if branch.norm.kind == NormKind::Batch {
                                pull(
                                    &format!("b{b}."),
                                    &mut branch.norm.running_mean,
                                    &mut branch.norm.running_var,
                                )?;
                            }
                        }
                        if let Some(sn) = fp.shared_norm.as_mut() {
                            if sn.kind == NormKind::Batch {
                                pull("shared.", &mut sn.running_mean, &mut sn.running_var)?;
                            }
                        }
                    }
                }
                _ => {}
            }
        }
        Ok(())
    }

    pub fn num_classes(&self) -> Option<usize> {
        self.layers.iter().rev().find_map(|(_, l)| match l {
            RtLayer::Linear { bias, .. } => Some(bias.len()),
            _ => None,
        })
    }
}

fn linear_forward(x: &Tensor, weights: &Tensor, bias: &[f64]) -> Result<Tensor> {
    let xs = x.shape();
    let flat = xs.c * xs.h * xs.w;
    let ws = weights.shape();
    if ws.c != flat {
        return Err(Error::ShapeMismatch(format!(
            "linear expects {} inputs, got {flat}",
            ws.c
        )));
    }
    let out = ws.n;
    let mut y = Tensor::zeros(xs.n, out, 1, 1)?;
    for n in 0..xs.n {
        let x_row = &x.data()[n * flat..(n + 1) * flat];
        for o in 0..out {
            let w_row = &weights.data()[o * flat..(o + 1) * flat];
            let acc: f64 = w_row.iter().zip(x_row).map(|(w, v)| w * v).sum();
            y.set(n, o, 0, 0, acc + bias[o]);
        }
    }
    Ok(y)
}

fn linear_backward(
    x: &Tensor,
    weights: &Tensor,
    bias: &[f64],
    grad_out: &Tensor,
) -> Result<(Tensor, Vec<f64>, Vec<f64>)> {
    let xs = x.shape();
    let flat = xs.c * xs.h * xs.w;
    let out = weights.shape().n;
    let gs = grad_out.shape();
    if gs.n != xs.n || gs.c != out || gs.h != 1 || gs.w != 1 {
        return Err(Error::ShapeMismatch(format!(
            "linear backward: grad_out {gs} vs expected ({},{out},1,1)",
            xs.n
        )));
    }
    let mut gx = x.zeros_like();
    let mut gw = vec![0.0; weights.len()];
    let mut gb = vec![0.0; bias.len()];
    for n in 0..xs.n {
        let x_row = &x.data()[n * flat..(n + 1) * flat];
        let gx_row = &mut gx.data_mut()[n * flat..(n + 1) * flat];
        for o in 0..out {
            let g = grad_out.at(n, o, 0, 0);
            gb[o] += g;
            let w_row = &weights.data()[o * flat..(o + 1) * flat];
            let gw_row = &mut gw[o * flat..(o + 1) * flat];
            for i in 0..flat {
                gw_row[i] += g * x_row[i];
                gx_row[i] += g * w_row[i];
            }
        }
    }
    Ok((gx, gw, gb))
}

/// Mean softmax cross-entropy over the batch plus its gradient w.r.t. the
/// logits. Numerically stable via per-row max subtraction.
pub fn softmax_cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    let s = logits.shape();
    if s.h != 1 || s.w != 1 {
        return Err(Error::InvalidShape(format!("logits must be (n,k,1,1), got {s}")));
    }
    if labels.len() != s.n {
        return Err(Error::ShapeMismatch(format!(
            "{} labels for {} logits rows",
            labels.len(),
            s.n
        )));
    }
    let k = s.c;
    let mut loss = 0.0;
    let mut grad = logits.zeros_like();
    for n in 0..s.n {
        let label = labels[n];
        if label >= k {
            return Err(Error::Config(format!("label {label} outside {k} classes")));
        }
        let row = &logits.data()[n * k..(n + 1) * k];
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|&v| (v - max).exp()).collect();
        let z: f64 = exps.iter().sum();
        loss += -(row[label] - max - z.ln());
        for c in 0..k {
            let p = exps[c] / z;
            grad.data_mut()[n * k + c] = (p - if c == label { 1.0 } else { 0.0 }) / s.n as f64;
        }
    }
    Ok((loss / s.n as f64, grad))
}

/// Top-1 accuracy; argmax ties resolve to the lowest class index.
pub fn accuracy(logits: &Tensor, labels: &[usize]) -> f64 {
    let s = logits.shape();
    let k = s.c;
    let mut correct = 0usize;
    for n in 0..s.n {
        let row = &logits.data()[n * k..(n + 1) * k];
        let mut best = 0usize;
        for c in 1..k {
            if row[c] > row[best] {
                best = c;
            }
        }
        if best == labels[n] {
            correct += 1;
        }
    }
    correct as f64 / s.n.max(1) as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::activations::ActivationKind;
    use crate::complexity::{builtin, count_params};

    #[test]
    fn counter_and_constructor_agree_for_every_buildable_model() {
        for name in [
            "toy-cnn-relu",
            "toy-cnn-prelu",
            "toy-cnn-swish",
            "toy-cnn-frelu",
            "toy-linear",
        ] {
            let spec = builtin(name).unwrap();
            let mut net = Network::build(&spec, &mut Rng::new(3)).unwrap();
            assert_eq!(net.param_count(), count_params(&spec).unwrap(), "{name}");
        }
    }

    #[test]
    fn residual_specs_are_counting_only() {
        let spec = builtin("resnet50-relu").unwrap();
        assert!(matches!(
            Network::build(&spec, &mut Rng::new(1)),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn forward_shapes_and_eval_determinism() {
        let spec = builtin("toy-cnn-frelu").unwrap();
        let net = Network::build(&spec, &mut Rng::new(5)).unwrap();
        let x = Tensor::gaussian(2, 1, 32, 32, 0.0, 1.0, &mut Rng::new(7)).unwrap();
        let a = net.forward(&x, Mode::Eval).unwrap();
        let b = net.forward(&x, Mode::Eval).unwrap();
        assert_eq!(a.output, b.output);
        let s = a.output.shape();
        assert_eq!((s.n, s.c, s.h, s.w), (2, 4, 1, 1));
    }

    #[test]
    fn backward_grad_names_match_param_walk() {
        let spec = builtin("toy-cnn-frelu").unwrap();
        let mut net = Network::build(&spec, &mut Rng::new(9)).unwrap();
        let x = Tensor::gaussian(2, 1, 32, 32, 0.0, 1.0, &mut Rng::new(11)).unwrap();
        let trace = net.forward(&x, Mode::Train).unwrap();
        let (loss, grad) = softmax_cross_entropy(&trace.output, &[0, 3]).unwrap();
        assert!(loss.is_finite());
        let (_, grads) = net.backward(&trace, &grad).unwrap();
        let params = net.named_params();
        assert_eq!(grads.len(), params.len());
        for ((gn, gv), (pn, _, pv)) in grads.iter().zip(&params) {
            assert_eq!(gn, pn);
            assert_eq!(gv.len(), pv.len());
        }
    }

    #[test]
    fn whole_network_gradient_matches_finite_differences() {
        // tiny variant of the toy net so the probe count stays small
        let mut spec = ModelSpec::new("tiny", (1, 8, 8));
        spec.push("c1", LayerKind::Conv { c_out: 2, kh: 3, kw: 3, stride: 2, pad: (1, 1), bias: true });
        spec.push("n1", LayerKind::Norm { kind: NormKind::Batch, channels: None });
        spec.push(
            "a1",
            LayerKind::Activation(ActivationKind::FRelu(crate::activations::FunnelConfig::default())),
        );
        spec.push("gap", LayerKind::Pool { kind: PoolKind::GlobalAvg, k: 1, stride: 1, pad: 0 });
        spec.push("fc", LayerKind::Linear { out: 3 });

        let mut net = Network::build(&spec, &mut Rng::new(13)).unwrap();
        let x = Tensor::gaussian(2, 1, 8, 8, 0.0, 1.0, &mut Rng::new(17)).unwrap();
        let labels = vec![0usize, 2];

        let trace = net.forward(&x, Mode::Train).unwrap();
        let (_, lgrad) = softmax_cross_entropy(&trace.output, &labels).unwrap();
        let (_, grads) = net.backward(&trace, &lgrad).unwrap();

        // numeric gradient of the scalar loss w.r.t. every parameter
        let params = net.named_params();
        let h = 1e-5;
        for (pi, (pname, _, pvals)) in params.iter().enumerate() {
            for ci in 0..pvals.len() {
                let mut probe = |delta: f64| -> f64 {
                    let mut cursor = 0usize;
                    net.visit_params_mut(&mut |_, _, data| {
                        if cursor == pi {
                            data[ci] += delta;
                        }
                        cursor += 1;
                    });
                    let t = net.forward(&x, Mode::Train).unwrap();
                    let (l, _) = softmax_cross_entropy(&t.output, &labels).unwrap();
                    let mut cursor = 0usize;
                    net.visit_params_mut(&mut |_, _, data| {
                        if cursor == pi {
                            data[ci] -= delta;
                        }
                        cursor += 1;
                    });
                    l
                };
                let numeric = (probe(h) - probe(-h)) / (2.0 * h);
                let analytic = grads[pi].1[ci];
                let rel = (analytic - numeric).abs()
                    / analytic.abs().max(numeric.abs()).max(1e-6);
                assert!(
                    rel <= 2e-4,
                    "{pname}[{ci}]: analytic {analytic} vs numeric {numeric} (rel {rel})"
                );
            }
        }
    }

    #[test]
    fn softmax_cross_entropy_sanity() {
        let logits = Tensor::from_vec(1, 3, 1, 1, vec![10.0, 0.0, -10.0]).unwrap();
        let (loss, grad) = softmax_cross_entropy(&logits, &[0]).unwrap();
        assert!(loss < 1e-4, "{loss}");
        assert!(grad.data()[0] < 0.0 || grad.data()[0].abs() < 1e-4);
        assert!(matches!(
            softmax_cross_entropy(&logits, &[5]),
            Err(Error::Config(_))
        ));
        let uniform = Tensor::zeros(1, 4, 1, 1).unwrap();
        let (loss, _) = softmax_cross_entropy(&uniform, &[2]).unwrap();
        assert!((loss - (4.0f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn accuracy_counts_argmax_hits() {
        let logits =
            Tensor::from_vec(2, 3, 1, 1, vec![1.0, 2.0, 0.0, 5.0, 1.0, 1.0]).unwrap();
        assert_eq!(accuracy(&logits, &[1, 0]), 1.0);
        assert_eq!(accuracy(&logits, &[0, 0]), 0.5);
    }

    #[test]
    fn state_round_trip_restores_everything() {
        let spec = builtin("toy-cnn-frelu").unwrap();
        let mut net = Network::build(&spec, &mut Rng::new(21)).unwrap();
        // train-mode forward perturbs running stats
        let x = Tensor::gaussian(4, 1, 32, 32, 0.0, 1.0, &mut Rng::new(23)).unwrap();
        let trace = net.forward(&x, Mode::Train).unwrap();
        net.apply_running(&trace);
        let state = net.named_state();

        let mut other = Network::build(&spec, &mut Rng::new(99)).unwrap();
        other.load_state(&state).unwrap();
        assert_eq!(other.named_state().len(), state.len());
        for ((an, at), (bn, bt)) in other.named_state().iter().zip(&state) {
            assert_eq!(an, bn);
            assert_eq!(at, bt);
        }
        // outputs now agree bitwise
        let ya = net.forward(&x, Mode::Eval).unwrap().output;
        let yb = other.forward(&x, Mode::Eval).unwrap().output;
        assert_eq!(ya, yb);
    }
}
