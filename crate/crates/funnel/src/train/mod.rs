//! Desk-scale supervised training: SGD with momentum and weight decay,
//! deterministic batch sampling, history recording, and checkpointing.
//!
//! Everything is a pure function of (seed, config, dataset): two runs with
//! the same inputs produce bitwise-identical histories and checkpoints.

mod checkpoint;
mod data;
mod network;

pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use data::{
    export_idx, load_idx, load_idx_images, load_idx_labels, synth_layouts, write_idx_images,
    write_idx_labels, Dataset, SYNTH_CLASSES, SYNTH_NOISE_STD,
};
pub use network::{
    accuracy, softmax_cross_entropy, NamedGrads, Network, ParamClass, Trace,
};

use crate::complexity::ModelSpec;
use crate::error::{Error, Result};
use crate::ops::Mode;
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Schedule {
    Constant,
    /// lr_t = lr * (1 - t/T).
    LinearDecay,
}

impl Schedule {
    pub fn lr_at(&self, base: f64, t: usize, total: usize) -> f64 {
        match self {
            Schedule::Constant => base,
            Schedule::LinearDecay => base * (1.0 - t as f64 / total.max(1) as f64),
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            Schedule::Constant => "constant",
            Schedule::LinearDecay => "linear",
        }
    }

    pub fn parse(s: &str) -> Option<Schedule> {
        match s {
            "constant" => Some(Schedule::Constant),
            "linear" => Some(Schedule::LinearDecay),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub model: String,
    pub dataset: String,
    pub lr: f64,
    pub schedule: Schedule,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub iterations: usize,
    pub seed: u64,
    /// Evaluate and record a history point every this many iterations;
    /// 0 means only at the end.
    pub eval_every: usize,
    /// Apply weight decay to activation parameters too (off by default;
    /// slopes and condition windows are usually left undecayed).
    pub decay_activations: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            model: "toy-cnn-frelu".into(),
            dataset: "synth".into(),
            lr: 0.1,
            schedule: Schedule::LinearDecay,
            momentum: 0.9,
            weight_decay: 1e-4,
            batch_size: 32,
            iterations: 2000,
            seed: 1,
            eval_every: 200,
            decay_activations: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        // lr = 0 is the documented null update: every parameter stays put
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be >= 0, got {}", self.lr)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!(
                "momentum must be in [0,1), got {}",
                self.momentum
            )));
        }
        if self.weight_decay < 0.0 {
            return Err(Error::Config("weight_decay must be >= 0".into()));
        }
        if self.batch_size == 0 || self.iterations == 0 {
            return Err(Error::Config("batch_size and iterations must be >= 1".into()));
        }
        Ok(())
    }

    /// `key value` lines; the same text round-trips through `parse`.
    pub fn to_text(&self) -> String {
        format!(
            "model {}\ndataset {}\nlr {}\nschedule {}\nmomentum {}\nweight_decay {}\nbatch_size {}\niterations {}\nseed {}\neval_every {}\ndecay_activations {}\n",
            self.model,
            self.dataset,
            self.lr,
            self.schedule.label(),
            self.momentum,
            self.weight_decay,
            self.batch_size,
            self.iterations,
            self.seed,
            self.eval_every,
            u8::from(self.decay_activations)
        )
    }

    pub fn parse(text: &str) -> Result<TrainConfig> {
        let mut cfg = TrainConfig::default();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once(char::is_whitespace)
                .ok_or_else(|| Error::Config(format!("line {line_no}: expected 'key value'")))?;
            let value = value.trim();
            let bad = |what: &str| Error::Config(format!("line {line_no}: bad {what} '{value}'"));
            match key {
                "model" => cfg.model = value.into(),
                "dataset" => cfg.dataset = value.into(),
                "lr" => cfg.lr = value.parse().map_err(|_| bad("lr"))?,
                "schedule" => {
                    cfg.schedule = Schedule::parse(value).ok_or_else(|| bad("schedule"))?
                }
                "momentum" => cfg.momentum = value.parse().map_err(|_| bad("momentum"))?,
                "weight_decay" => {
                    cfg.weight_decay = value.parse().map_err(|_| bad("weight_decay"))?
                }
                "batch_size" => cfg.batch_size = value.parse().map_err(|_| bad("batch_size"))?,
                "iterations" => cfg.iterations = value.parse().map_err(|_| bad("iterations"))?,
                "seed" => cfg.seed = value.parse().map_err(|_| bad("seed"))?,
                "eval_every" => cfg.eval_every = value.parse().map_err(|_| bad("eval_every"))?,
                "decay_activations" => {
                    cfg.decay_activations = match value {
                        "0" => false,
                        "1" => true,
                        _ => return Err(bad("decay_activations")),
                    }
                }
                other => {
                    return Err(Error::Config(format!("line {line_no}: unknown key '{other}'")))
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// One SGD-with-momentum update on a flat parameter slice:
/// buf <- momentum*buf + grad + wd*param; param <- param - lr*buf.
pub fn sgd_update(param: &mut [f64], grad: &[f64], buf: &mut [f64], lr: f64, momentum: f64, weight_decay: f64) {
    for ((p, &g), b) in param.iter_mut().zip(grad).zip(buf.iter_mut()) {
        *b = momentum * *b + g + weight_decay * *p;
        *p -= lr * *b;
    }
}

/// Momentum buffers in canonical parameter order.
pub struct SgdState {
    pub buffers: Vec<(String, Vec<f64>)>,
}

impl SgdState {
    pub fn new(net: &mut Network) -> SgdState {
        let buffers = net
            .named_params()
            .into_iter()
            .map(|(name, _, values)| (name, vec![0.0; values.len()]))
            .collect();
        SgdState { buffers }
    }

    /// Apply one step. Weight decay touches conv/linear weights; activation
    /// parameters join only when `decay_activations` is set; biases and norm
    /// affine never decay.
    pub fn step(
        &mut self,
        net: &mut Network,
        grads: &NamedGrads,
        lr: f64,
        momentum: f64,
        weight_decay: f64,
        decay_activations: bool,
    ) -> Result<()> {
        if grads.len() != self.buffers.len() {
            return Err(Error::State(format!(
                "{} gradients for {} momentum buffers",
                grads.len(),
                self.buffers.len()
            )));
        }
        let mut cursor = 0usize;
        let mut problem = None;
        net.visit_params_mut(&mut |name, class, data| {
            if problem.is_some() {
                return;
            }
            let (gname, gvals) = &grads[cursor];
            let (bname, bvals) = &mut self.buffers[cursor];
            if gname != name || bname != name || gvals.len() != data.len() {
                problem = Some(format!("parameter walk mismatch at {name} vs {gname}"));
                return;
            }
            let wd = match class {
                ParamClass::Weight => weight_decay,
                ParamClass::Activation if decay_activations => weight_decay,
                _ => 0.0,
            };
            sgd_update(data, gvals, bvals, lr, momentum, wd);
            cursor += 1;
        });
        match problem {
            Some(msg) => Err(Error::State(msg)),
            None => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HistoryPoint {
    pub iteration: usize,
    /// Mean training loss since the previous history point.
    pub loss: f64,
    /// Eval-split accuracy at this point.
    pub accuracy: f64,
}

pub fn history_csv(history: &[HistoryPoint]) -> String {
    let mut out = String::from("iter,loss,acc\n");
    for h in history {
        out.push_str(&format!("{},{},{}\n", h.iteration, h.loss, h.accuracy));
    }
    out
}

pub struct TrainReport {
    pub history: Vec<HistoryPoint>,
    pub checkpoint: Checkpoint,
    /// Iteration at which the loss became non-finite, if training stopped
    /// early; the checkpoint then holds the last good state.
    pub diverged_at: Option<usize>,
    pub final_accuracy: f64,
}

/// Train from scratch. Deterministic for a given (config, datasets).
pub fn train(
    spec: &ModelSpec,
    train_set: &Dataset,
    eval_set: &Dataset,
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    train_partial(spec, train_set, eval_set, cfg, cfg.iterations)
}

/// Train from scratch but stop after `stop_after` iterations, keeping the
/// schedule horizon at `cfg.iterations`; the checkpoint resumes bitwise.
pub fn train_partial(
    spec: &ModelSpec,
    train_set: &Dataset,
    eval_set: &Dataset,
    cfg: &TrainConfig,
    stop_after: usize,
) -> Result<TrainReport> {
    cfg.validate()?;
    let mut rng = Rng::new(cfg.seed);
    let mut net = Network::build(spec, &mut rng)?;
    let mut opt = SgdState::new(&mut net);
    run_loop(spec, &mut net, &mut opt, &mut rng, 0, stop_after.min(cfg.iterations), train_set, eval_set, cfg)
}

/// Continue training from a checkpoint up to `cfg.iterations`, bitwise
/// identical to an uninterrupted run.
pub fn train_resumed(
    spec: &ModelSpec,
    checkpoint: &Checkpoint,
    train_set: &Dataset,
    eval_set: &Dataset,
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    cfg.validate()?;
    if checkpoint.model != spec.name {
        return Err(Error::Config(format!(
            "checkpoint is for model '{}', spec is '{}'",
            checkpoint.model, spec.name
        )));
    }
    let mut throwaway = Rng::new(cfg.seed);
    let mut net = Network::build(spec, &mut throwaway)?;
    let state: Vec<(String, crate::tensor::Tensor)> = checkpoint
        .sections
        .iter()
        .filter(|(n, _)| !n.starts_with("momentum."))
        .cloned()
        .collect();
    net.load_state(&state)?;
    let mut opt = SgdState::new(&mut net);
    for (name, buf) in opt.buffers.iter_mut() {
        let key = format!("momentum.{name}");
        let t = checkpoint
            .section(&key)
            .ok_or_else(|| Error::State(format!("checkpoint missing {key}")))?;
        if t.len() != buf.len() {
            return Err(Error::State(format!("{key}: length mismatch")));
        }
        buf.copy_from_slice(t.data());
    }
    let mut rng = checkpoint.rng();
    let start = checkpoint.iteration as usize;
    run_loop(spec, &mut net, &mut opt, &mut rng, start, cfg.iterations, train_set, eval_set, cfg)
}

#[allow(clippy::too_many_arguments)]
fn run_loop(
    spec: &ModelSpec,
    net: &mut Network,
    opt: &mut SgdState,
    rng: &mut Rng,
    start: usize,
    end: usize,
    train_set: &Dataset,
    eval_set: &Dataset,
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    if let Some(k) = net.num_classes() {
        if k != train_set.num_classes {
            return Err(Error::Config(format!(
                "model emits {k} classes, dataset has {}",
                train_set.num_classes
            )));
        }
    }
    let mut history = Vec::new();
    let mut loss_accum = 0.0;
    let mut loss_count = 0usize;
    let mut diverged_at = None;

    for t in start..end {
        let lr_t = cfg.schedule.lr_at(cfg.lr, t, cfg.iterations);
        let indices: Vec<usize> =
            (0..cfg.batch_size).map(|_| rng.next_below(train_set.len())).collect();
        let (batch, labels) = train_set.batch(&indices)?;
        let trace = net.forward(&batch, Mode::Train)?;
        let (loss, lgrad) = softmax_cross_entropy(&trace.output, &labels)?;
        if !loss.is_finite() {
            diverged_at = Some(t);
            break;
        }
        let (_, grads) = net.backward(&trace, &lgrad)?;
        net.apply_running(&trace);
        opt.step(net, &grads, lr_t, cfg.momentum, cfg.weight_decay, cfg.decay_activations)?;

        loss_accum += loss;
        loss_count += 1;
        let is_eval_point =
            (cfg.eval_every > 0 && (t + 1) % cfg.eval_every == 0) || t + 1 == end;
        if is_eval_point {
            let acc = evaluate(net, eval_set)?.accuracy;
            history.push(HistoryPoint {
                iteration: t + 1,
                loss: loss_accum / loss_count as f64,
                accuracy: acc,
            });
            loss_accum = 0.0;
            loss_count = 0;
        }
    }

    let iterations_done = diverged_at.unwrap_or(end) as u64;
    let final_accuracy = history.last().map_or(0.0, |h| h.accuracy);
    let checkpoint = capture(spec, net, opt, iterations_done, rng);
    Ok(TrainReport { history, checkpoint, diverged_at, final_accuracy })
}

fn capture(spec: &ModelSpec, net: &mut Network, opt: &SgdState, iteration: u64, rng: &Rng) -> Checkpoint {
    let mut sections = net.named_state();
    for (name, buf) in &opt.buffers {
        sections.push((
            format!("momentum.{name}"),
            crate::tensor::Tensor::from_vec(1, buf.len(), 1, 1, buf.clone())
                .expect("momentum tensor"),
        ));
    }
    let (counter, spare) = rng.state();
    Checkpoint {
        model: spec.name.clone(),
        iteration,
        rng_counter: counter,
        rng_spare: spare,
        sections,
    }
}

/// Build a network from a spec and a checkpoint's stored state.
pub fn restore_network(spec: &ModelSpec, checkpoint: &Checkpoint) -> Result<Network> {
    let mut rng = Rng::new(0);
    let mut net = Network::build(spec, &mut rng)?;
    let state: Vec<(String, crate::tensor::Tensor)> = checkpoint
        .sections
        .iter()
        .filter(|(n, _)| !n.starts_with("momentum."))
        .cloned()
        .collect();
    net.load_state(&state)?;
    Ok(net)
}

pub struct EvalReport {
    pub accuracy: f64,
    /// Per-class accuracy; classes with no samples report 0.
    pub per_class: Vec<f64>,
}

/// Eval-mode top-1 accuracy over a dataset, batched.
pub fn evaluate(net: &Network, dataset: &Dataset) -> Result<EvalReport> {
    let k = net
        .num_classes()
        .ok_or_else(|| Error::Config("model has no classifier head".into()))?;
    if k != dataset.num_classes {
        return Err(Error::Config(format!(
            "model emits {k} classes, dataset has {}",
            dataset.num_classes
        )));
    }
    let mut correct = vec![0usize; k];
    let mut totals = vec![0usize; k];
    let batch = 64usize;
    let mut i = 0usize;
    while i < dataset.len() {
        let hi = (i + batch).min(dataset.len());
        let indices: Vec<usize> = (i..hi).collect();
        let (x, labels) = dataset.batch(&indices)?;
        let out = net.forward(&x, Mode::Eval)?.output;
        let s = out.shape();
        for n in 0..s.n {
            let row = &out.data()[n * k..(n + 1) * k];
            let mut best = 0usize;
            for c in 1..k {
                if row[c] > row[best] {
                    best = c;
                }
            }
            totals[labels[n]] += 1;
            if best == labels[n] {
                correct[labels[n]] += 1;
            }
        }
        i = hi;
    }
    let total: usize = totals.iter().sum();
    let hits: usize = correct.iter().sum();
    let per_class = correct
        .iter()
        .zip(&totals)
        .map(|(&c, &t)| if t == 0 { 0.0 } else { c as f64 / t as f64 })
        .collect();
    Ok(EvalReport { accuracy: hits as f64 / total.max(1) as f64, per_class })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::complexity::builtin;
    use crate::tensor::Tensor;

    #[test]
    fn sgd_update_fixed_points_and_descent() {
        // zero gradient, zero buffer, zero decay: parameters unchanged
        let mut p = vec![1.0, -2.0];
        let mut buf = vec![0.0, 0.0];
        sgd_update(&mut p, &[0.0, 0.0], &mut buf, 0.1, 0.9, 0.0);
        assert_eq!(p, vec![1.0, -2.0]);

        // no momentum, no decay: plain gradient descent
        let mut p = vec![1.0];
        let mut buf = vec![0.0];
        sgd_update(&mut p, &[0.5], &mut buf, 0.1, 0.0, 0.0);
        assert_eq!(p, vec![1.0 - 0.05]);
    }

    #[test]
    fn sgd_two_step_recurrence_on_quadratic() {
        // f(w) = 0.5 w^2, grad = w; lr 0.1, momentum 0.9, w0 = 1.
        // step 1: buf = 1.0, w = 0.9; step 2: buf = 0.9*1 + 0.9 = 1.8,
        // w = 0.9 - 0.18 = 0.72. Frozen by hand-executing the recurrence.
        let mut w = vec![1.0];
        let mut buf = vec![0.0];
        let g1 = w[0];
        sgd_update(&mut w, &[g1], &mut buf, 0.1, 0.9, 0.0);
        assert!((w[0] - 0.9).abs() < 1e-15);
        let g2 = w[0];
        sgd_update(&mut w, &[g2], &mut buf, 0.1, 0.9, 0.0);
        assert!((w[0] - 0.72).abs() < 1e-15);
    }

    #[test]
    fn config_round_trips_and_validates() {
        let cfg = TrainConfig { seed: 7, iterations: 10, ..TrainConfig::default() };
        let text = cfg.to_text();
        let back = TrainConfig::parse(&text).unwrap();
        assert_eq!(back, cfg);

        assert!(TrainConfig::parse("lr -0.5\n").is_err());
        assert!(TrainConfig::parse("momentum 1.5\n").is_err());
        assert!(TrainConfig::parse("bogus 3\n").is_err());
    }

    fn tiny_sets() -> (Dataset, Dataset) {
        let ds = synth_layouts(96, 32, &mut Rng::new(42)).unwrap();
        ds.split_at(64).unwrap()
    }

    fn quick_cfg(iters: usize, seed: u64) -> TrainConfig {
        TrainConfig {
            model: "toy-cnn-relu".into(),
            iterations: iters,
            batch_size: 8,
            eval_every: 0,
            seed,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn zero_lr_single_iteration_keeps_params() {
        let spec = builtin("toy-cnn-relu").unwrap();
        let (tr, te) = tiny_sets();
        let mut cfg = quick_cfg(1, 3);
        cfg.lr = 0.0;
        let report = train(&spec, &tr, &te, &cfg).unwrap();
        // batch-norm running stats move during the forward, but every
        // learnable parameter stays bitwise at its init
        let mut fresh = Network::build(&spec, &mut Rng::new(3)).unwrap();
        let mut restored = restore_network(&spec, &report.checkpoint).unwrap();
        for ((an, _, av), (bn, _, bv)) in
            fresh.named_params().iter().zip(restored.named_params().iter())
        {
            assert_eq!(an, bn);
            for (x, y) in av.iter().zip(bv) {
                assert_eq!(x.to_bits(), y.to_bits(), "{an}");
            }
        }
    }

    #[test]
    fn same_seed_same_history_bitwise() {
        let spec = builtin("toy-cnn-relu").unwrap();
        let (tr, te) = tiny_sets();
        let cfg = quick_cfg(6, 9);
        let a = train(&spec, &tr, &te, &cfg).unwrap();
        let b = train(&spec, &tr, &te, &cfg).unwrap();
        assert_eq!(a.history, b.history);
        assert_eq!(a.checkpoint, b.checkpoint);
    }

    #[test]
    fn resume_matches_uninterrupted_run_bitwise() {
        let spec = builtin("toy-cnn-frelu").unwrap();
        let (tr, te) = tiny_sets();
        let mut cfg = quick_cfg(8, 11);
        cfg.model = "toy-cnn-frelu".into();

        let full = train(&spec, &tr, &te, &cfg).unwrap();

        // stop mid-run under the same schedule horizon, then resume
        let half = train_partial(&spec, &tr, &te, &cfg, 4).unwrap();
        assert_eq!(half.checkpoint.iteration, 4);
        let resumed = train_resumed(&spec, &half.checkpoint, &tr, &te, &cfg).unwrap();

        assert_eq!(resumed.checkpoint, full.checkpoint);
    }

    #[test]
    fn loss_decreases_on_the_toy_task() {
        let spec = builtin("toy-cnn-relu").unwrap();
        let (tr, te) = tiny_sets();
        let mut cfg = quick_cfg(60, 13);
        cfg.eval_every = 20;
        let report = train(&spec, &tr, &te, &cfg).unwrap();
        let first = report.history.first().unwrap().loss;
        let last = report.history.last().unwrap().loss;
        assert!(last < first, "loss {first} -> {last}");
    }

    #[test]
    fn random_init_accuracy_is_chance_level() {
        let spec = builtin("toy-cnn-relu").unwrap();
        let ds = synth_layouts(2000, 32, &mut Rng::new(99)).unwrap();
        let net = Network::build(&spec, &mut Rng::new(1)).unwrap();
        let report = evaluate(&net, &ds).unwrap();
        assert!((report.accuracy - 0.25).abs() <= 0.05, "{}", report.accuracy);
        assert_eq!(report.per_class.len(), 4);
    }

    #[test]
    fn perfect_memorization_fixture_scores_one() {
        // a linear model whose weights are set by hand to key on one pixel
        // per class: images are one-hot at pixel = class index
        let spec = builtin("toy-linear").unwrap();
        let mut net = Network::build(&spec, &mut Rng::new(1)).unwrap();
        net.visit_params_mut(&mut |name, _, data| {
            if name.ends_with("weight") {
                data.fill(0.0);
                let flat = 32 * 32;
                for class in 0..4 {
                    data[class * flat + class] = 10.0;
                }
            } else {
                data.fill(0.0);
            }
        });
        let mut images = Tensor::zeros(4, 1, 32, 32).unwrap();
        for class in 0..4 {
            images.set(class, 0, 0, class, 1.0);
        }
        let ds = Dataset { images, labels: vec![0, 1, 2, 3], num_classes: 4 };
        let report = evaluate(&net, &ds).unwrap();
        assert_eq!(report.accuracy, 1.0);
        assert!(report.per_class.iter().all(|&a| a == 1.0));
    }

    #[test]
    fn class_count_mismatch_rejected() {
        let spec = builtin("toy-cnn-relu").unwrap();
        let net = Network::build(&spec, &mut Rng::new(1)).unwrap();
        let mut ds = synth_layouts(32, 32, &mut Rng::new(3)).unwrap();
        ds.num_classes = 7;
        assert!(matches!(evaluate(&net, &ds), Err(Error::Config(_))));
    }

}
