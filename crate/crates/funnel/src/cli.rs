//! Command-line surface: gradient checks, complexity counting, training,
//! evaluation, ablation sweeps, capacity analysis, and dataset export.
//!
//! Exit codes: 0 success, 1 check/assertion failure, 2 usage error. Every
//! subcommand prints its resolved configuration before acting, and training
//! configs re-run from exactly that printed text. `FNK_THREADS` bounds
//! internal parallelism.

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::activations::{ActivationKind, ConditionKind, FunnelConfig, Fusion, PairCombine, WindowSpec};
use crate::analysis;
use crate::checks;
use crate::complexity::{self, ModelSpec};
use crate::error::{Error, Result};
use crate::ops::NormKind;
use crate::rng::Rng;
use crate::train::{
    self, evaluate, export_idx, load_idx, restore_network, synth_layouts, Checkpoint, Dataset,
    TrainConfig,
};

/// Seed of the fixed synthetic benchmark corpus.
pub const SYNTH_CORPUS_SEED: u64 = 7777;
/// Benchmark corpus: 10k images at 32x32, first 8k train / last 2k test.
pub const SYNTH_CORPUS_SIZE: usize = 10_000;
pub const SYNTH_TRAIN_SPLIT: usize = 8_000;
pub const SYNTH_IMAGE_SIZE: usize = 32;

#[derive(Parser)]
#[command(
    name = "funnel",
    version,
    about = "Funnel activation (FReLU) kernels: gradient checks, complexity accounting, capacity analysis, and desk-scale training"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Finite-difference check of one operation's backward pass
    Gradcheck {
        /// Operation name; unknown names list the valid set
        #[arg(long)]
        op: String,
        /// Square window size for funnel variants
        #[arg(long, default_value_t = 3)]
        window: usize,
        /// Norm after the condition: bn|ln|in|gn|none
        #[arg(long, default_value = "bn")]
        norm: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Random input shapes to test
        #[arg(long, default_value_t = 3)]
        shapes: usize,
    },
    /// Parameters and FLOPs of a builtin or described model
    Count {
        /// Builtin name (e.g. resnet50-relu) or a model description file
        #[arg(long)]
        model: String,
        /// Input shape CxHxW; overrides the description's input line
        #[arg(long)]
        input: Option<String>,
        /// Emit the per-layer breakdown as CSV on stdout
        #[arg(long)]
        csv: bool,
    },
    /// Train a model; writes history.csv, model.fnkc, resolved.cfg
    Train {
        /// Key-value config file; defaults apply for absent keys
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        model: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        iterations: Option<usize>,
        /// Dataset: "synth" or a directory of IDX files
        #[arg(long)]
        dataset: Option<String>,
        #[arg(long, default_value = "runs/latest")]
        out: PathBuf,
    },
    /// Accuracy of a checkpoint on a dataset's test split
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "synth")]
        dataset: String,
    },
    /// Train a suite of activation variants over several seeds
    Ablate {
        /// condition | fusion | window | norm
        #[arg(long)]
        suite: String,
        #[arg(long, default_value_t = 3)]
        seeds: usize,
        #[arg(long, default_value_t = 600)]
        iterations: usize,
        /// Per-run CSV output path
        #[arg(long, default_value = "runs/ablation.csv")]
        out: PathBuf,
    },
    /// Symbolic activate-field sizes after n layers
    Afield {
        #[arg(long)]
        layers: usize,
        #[arg(long, default_value_t = 3)]
        k: usize,
    },
    /// Empirical receptive-field mask of stacked funnel layers
    Rfield {
        #[arg(long)]
        layers: usize,
        #[arg(long, default_value_t = 3)]
        k: usize,
        /// Grid side; default fits the symbolic bound plus margin
        #[arg(long)]
        size: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Use the extent-maximizing construction instead of random draws
        #[arg(long)]
        worst: bool,
    },
    /// Generate the synthetic layout dataset as IDX files
    ExportSynth {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 32)]
        size: usize,
        #[arg(long, default_value_t = SYNTH_CORPUS_SEED)]
        seed: u64,
    },
}

/// Parse argv and dispatch; returns the process exit code.
pub fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn print_config(pairs: &[(&str, String)]) {
    for (k, v) in pairs {
        println!("{k} {v}");
    }
}

fn dispatch(cmd: Command) -> Result<i32> {
    match cmd {
        Command::Gradcheck { op, window, norm, seed, shapes } => {
            cmd_gradcheck(&op, window, &norm, seed, shapes)
        }
        Command::Count { model, input, csv } => cmd_count(&model, input.as_deref(), csv),
        Command::Train { config, model, seed, iterations, dataset, out } => {
            cmd_train(config.as_deref(), model, seed, iterations, dataset, &out)
        }
        Command::Eval { checkpoint, dataset } => cmd_eval(&checkpoint, &dataset),
        Command::Ablate { suite, seeds, iterations, out } => {
            cmd_ablate(&suite, seeds, iterations, &out)
        }
        Command::Afield { layers, k } => cmd_afield(layers, k),
        Command::Rfield { layers, k, size, seed, worst } => {
            cmd_rfield(layers, k, size, seed, worst)
        }
        Command::ExportSynth { n, out, size, seed } => cmd_export_synth(n, &out, size, seed),
    }
}

fn parse_norm(name: &str) -> Option<NormKind> {
    match name {
        "bn" => Some(NormKind::Batch),
        "ln" => Some(NormKind::Layer),
        "in" => Some(NormKind::Instance),
        "gn" => Some(NormKind::Group(2)),
        "none" => Some(NormKind::None),
        _ => None,
    }
}

fn cmd_gradcheck(op: &str, window: usize, norm: &str, seed: u64, shapes: usize) -> Result<i32> {
    let Some(norm_kind) = parse_norm(norm) else {
        eprintln!("unknown norm '{norm}'; expected bn|ln|in|gn|none");
        return Ok(2);
    };
    if !checks::CHECKABLE_OPS.contains(&op) {
        eprintln!("unknown op '{op}'; expected one of: {}", checks::CHECKABLE_OPS.join(", "));
        return Ok(2);
    }
    print_config(&[
        ("op", op.into()),
        ("window", window.to_string()),
        ("norm", norm.into()),
        ("seed", seed.to_string()),
        ("shapes", shapes.to_string()),
    ]);
    let reports = checks::run_named_check(op, window, norm_kind, seed, shapes)?;
    let mut all_passed = true;
    for (i, report) in reports.iter().enumerate() {
        println!("shape {i}:");
        println!("{}", report.render());
        all_passed &= report.passed;
    }
    println!("{}", if all_passed { "PASS" } else { "FAIL" });
    Ok(if all_passed { 0 } else { 1 })
}

fn parse_input_shape(s: &str) -> Option<(usize, usize, usize)> {
    let parts: Vec<&str> = s.split('x').collect();
    if parts.len() != 3 {
        return None;
    }
    Some((parts[0].parse().ok()?, parts[1].parse().ok()?, parts[2].parse().ok()?))
}

/// Builtin model by name, or a parsed description file.
pub fn resolve_model(name: &str) -> Result<Option<ModelSpec>> {
    if let Some(m) = complexity::builtin(name) {
        return Ok(Some(m));
    }
    let path = Path::new(name);
    if path.exists() {
        let text = std::fs::read_to_string(path)?;
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("model");
        return ModelSpec::parse(stem, &text).map(Some);
    }
    Ok(None)
}

fn cmd_count(model: &str, input: Option<&str>, csv: bool) -> Result<i32> {
    let Some(mut spec) = resolve_model(model)? else {
        eprintln!("unknown model '{model}': not a builtin and not a readable file");
        return Ok(2);
    };
    if let Some(raw) = input {
        let Some(shape) = parse_input_shape(raw) else {
            eprintln!("bad --input '{raw}', expected CxHxW");
            return Ok(2);
        };
        spec.input_shape = shape;
    }
    print_config(&[
        ("model", model.into()),
        (
            "input",
            format!("{}x{}x{}", spec.input_shape.0, spec.input_shape.1, spec.input_shape.2),
        ),
    ]);
    let report = complexity::count(&spec)?;
    println!("params={} flops={}", report.params_display(), report.flops_display());
    println!(
        "params_raw={} params_with_norm={} flops_raw={} aux_ops={}",
        report.params_conv, report.params_total, report.flops, report.aux_ops
    );
    if csv {
        print!("{}", report.csv());
    }
    Ok(0)
}

/// The fixed synthetic benchmark corpus, split train/test.
pub fn synth_corpus() -> Result<(Dataset, Dataset)> {
    let all = synth_layouts(SYNTH_CORPUS_SIZE, SYNTH_IMAGE_SIZE, &mut Rng::new(SYNTH_CORPUS_SEED))?;
    all.split_at(SYNTH_TRAIN_SPLIT)
}

/// "synth" or a directory holding {train,test}-{images,labels} IDX files.
pub fn resolve_dataset(name: &str) -> Result<(Dataset, Dataset)> {
    if name == "synth" {
        return synth_corpus();
    }
    let dir = Path::new(name);
    if !dir.is_dir() {
        return Err(Error::Config(format!(
            "dataset '{name}' is neither 'synth' nor a directory"
        )));
    }
    let train = load_idx(
        &dir.join("train-images.idx3-ubyte"),
        &dir.join("train-labels.idx1-ubyte"),
    )?;
    let test = load_idx(
        &dir.join("test-images.idx3-ubyte"),
        &dir.join("test-labels.idx1-ubyte"),
    )?;
    Ok((train, test))
}

fn cmd_train(
    config: Option<&Path>,
    model: Option<String>,
    seed: Option<u64>,
    iterations: Option<usize>,
    dataset: Option<String>,
    out: &Path,
) -> Result<i32> {
    let mut cfg = match config {
        Some(path) => TrainConfig::parse(&std::fs::read_to_string(path)?)?,
        None => TrainConfig::default(),
    };
    if let Some(m) = model {
        cfg.model = m;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(it) = iterations {
        cfg.iterations = it;
    }
    if let Some(d) = dataset {
        cfg.dataset = d;
    }
    let Some(spec) = resolve_model(&cfg.model)? else {
        eprintln!("unknown model '{}'", cfg.model);
        return Ok(2);
    };
    print!("{}", cfg.to_text());

    let (train_set, eval_set) = resolve_dataset(&cfg.dataset)?;
    let report = train::train(&spec, &train_set, &eval_set, &cfg)?;

    std::fs::create_dir_all(out)?;
    std::fs::write(out.join("history.csv"), train::history_csv(&report.history))?;
    std::fs::write(out.join("resolved.cfg"), cfg.to_text())?;
    report.checkpoint.save(&out.join("model.fnkc"))?;
    if let Some(t) = report.diverged_at {
        println!("diverged at iteration {t}; checkpoint holds the last good state");
        return Ok(1);
    }
    println!("final_accuracy={:.4}", report.final_accuracy);
    println!("wrote {}", out.display());
    Ok(0)
}

fn cmd_eval(checkpoint: &Path, dataset: &str) -> Result<i32> {
    print_config(&[
        ("checkpoint", checkpoint.display().to_string()),
        ("dataset", dataset.into()),
    ]);
    let cp = Checkpoint::load(checkpoint)?;
    let Some(spec) = resolve_model(&cp.model)? else {
        eprintln!("checkpoint references unknown model '{}'", cp.model);
        return Ok(2);
    };
    let net = restore_network(&spec, &cp)?;
    let (_, test) = resolve_dataset(dataset)?;
    let report = evaluate(&net, &test)?;
    println!("accuracy={:.4}", report.accuracy);
    for (c, acc) in report.per_class.iter().enumerate() {
        println!("class{c}_accuracy={acc:.4}");
    }
    Ok(0)
}

/// One ablation suite row: Table-style id, paper-style label, activation.
pub fn suite_variants(suite: &str) -> Option<Vec<(String, String, ActivationKind)>> {
    let frelu = |cfg: FunnelConfig| ActivationKind::FRelu(cfg);
    let base = FunnelConfig::default();
    let rows: Vec<(&str, String, ActivationKind)> = match suite {
        "condition" => vec![
            ("A", "Max(x, ParamPool(x))".into(), frelu(base)),
            (
                "B",
                "Max(x, MaxPool(x))".into(),
                frelu(FunnelConfig { condition_kind: ConditionKind::MaxPool, ..base }),
            ),
            (
                "C",
                "Max(x, AvgPool(x))".into(),
                frelu(FunnelConfig { condition_kind: ConditionKind::AvgPool, ..base }),
            ),
            (
                "D",
                "Sum(x, ParamPool(x))".into(),
                frelu(FunnelConfig { fusion: Fusion::Sum, ..base }),
            ),
            ("E", "Max(DW(x), 0)".into(), ActivationKind::DwThenRelu(base)),
        ],
        "fusion" => vec![
            ("A", "Max(x, ParamPool(x))".into(), frelu(base)),
            (
                "D",
                "Sum(x, ParamPool(x))".into(),
                frelu(FunnelConfig { fusion: Fusion::Sum, ..base }),
            ),
        ],
        "window" => vec![
            ("A", "1x1".into(), frelu(FunnelConfig { window: WindowSpec::Square(1), ..base })),
            ("B", "3x3".into(), frelu(base)),
            ("C", "5x5".into(), frelu(FunnelConfig { window: WindowSpec::Square(5), ..base })),
            ("D", "7x7".into(), frelu(FunnelConfig { window: WindowSpec::Square(7), ..base })),
            (
                "E",
                "Sum(1x3,3x1)".into(),
                frelu(FunnelConfig {
                    window: WindowSpec::RowColPair,
                    pair_combine: PairCombine::Sum,
                    ..base
                }),
            ),
            (
                "F",
                "Max(1x3,3x1)".into(),
                frelu(FunnelConfig {
                    window: WindowSpec::RowColPair,
                    pair_combine: PairCombine::Max,
                    ..base
                }),
            ),
        ],
        "norm" => vec![
            ("-", "-".into(), frelu(FunnelConfig { norm_kind: NormKind::None, ..base })),
            ("BN", "BN".into(), frelu(base)),
            ("LN", "LN".into(), frelu(FunnelConfig { norm_kind: NormKind::Layer, ..base })),
            ("IN", "IN".into(), frelu(FunnelConfig { norm_kind: NormKind::Instance, ..base })),
            (
                "GN",
                "GN".into(),
                frelu(FunnelConfig { norm_kind: NormKind::Group(4), ..base }),
            ),
        ],
        _ => return None,
    };
    Some(rows.into_iter().map(|(id, label, act)| (id.to_string(), label, act)).collect())
}

fn cmd_ablate(suite: &str, seeds: usize, iterations: usize, out: &Path) -> Result<i32> {
    let Some(variants) = suite_variants(suite) else {
        eprintln!("unknown suite '{suite}'; expected condition|fusion|window|norm");
        return Ok(2);
    };
    if seeds == 0 {
        eprintln!("--seeds must be >= 1");
        return Ok(2);
    }
    print_config(&[
        ("suite", suite.into()),
        ("seeds", seeds.to_string()),
        ("iterations", iterations.to_string()),
        ("out", out.display().to_string()),
    ]);

    let (train_set, eval_set) = synth_corpus()?;
    let baseline_params =
        complexity::count_params(&complexity::toy_cnn("toy-cnn-relu", ActivationKind::Relu))?;

    let mut runs_csv = String::from("suite,id,variant,seed,accuracy\n");
    let mut summary = String::from("suite,id,variant,seeds,mean_acc,sd_acc,added_params\n");
    for (id, label, act) in &variants {
        let spec = complexity::toy_cnn(&format!("toy-ablate-{id}"), act.clone());
        let added = complexity::count_params(&spec)? - baseline_params;
        let mut accs = Vec::new();
        for s in 1..=seeds {
            let cfg = TrainConfig {
                model: spec.name.clone(),
                iterations,
                seed: s as u64,
                eval_every: 0,
                ..TrainConfig::default()
            };
            let report = train::train(&spec, &train_set, &eval_set, &cfg)?;
            runs_csv.push_str(&format!(
                "{suite},{id},{label},{s},{:.6}\n",
                report.final_accuracy
            ));
            accs.push(report.final_accuracy);
        }
        let mean = accs.iter().sum::<f64>() / accs.len() as f64;
        let sd = if accs.len() > 1 {
            (accs.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / (accs.len() - 1) as f64)
                .sqrt()
        } else {
            0.0
        };
        summary.push_str(&format!(
            "{suite},{id},{label},{},{mean:.6},{sd:.6},{added}\n",
            accs.len()
        ));
    }
    if let Some(parent) = out.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    std::fs::write(out, &runs_csv)?;
    print!("{summary}");
    Ok(0)
}

fn cmd_afield(layers: usize, k: usize) -> Result<i32> {
    print_config(&[("layers", layers.to_string()), ("k", k.to_string())]);
    let set = analysis::activate_field(layers, k)?;
    println!("{}", set.csv());
    Ok(0)
}

fn cmd_rfield(layers: usize, k: usize, size: Option<usize>, seed: u64, worst: bool) -> Result<i32> {
    print_config(&[
        ("layers", layers.to_string()),
        ("k", k.to_string()),
        ("seed", seed.to_string()),
        ("worst", worst.to_string()),
    ]);
    let mask = if worst {
        let stack = analysis::FreluStack::worst_case(layers, k, 1)?;
        let input = analysis::FreluStack::worst_case_input(layers, k, 1)?;
        let side = input.shape().h;
        analysis::receptive_mask(&stack, &input, (0, side / 2, side / 2))?
    } else {
        let side = size.unwrap_or(1 + layers * (k - 1) + 4);
        let mut rng = Rng::new(seed);
        analysis::empirical_receptive_field(
            layers,
            k,
            (side, side),
            (0, side / 2, side / 2),
            None,
            &mut rng,
        )?
    };
    println!("extent={}x{}", mask.extent.0, mask.extent.1);
    print!("{}", mask.csv());
    Ok(0)
}

fn cmd_export_synth(n: usize, out: &Path, size: usize, seed: u64) -> Result<i32> {
    print_config(&[
        ("n", n.to_string()),
        ("out", out.display().to_string()),
        ("size", size.to_string()),
        ("seed", seed.to_string()),
    ]);
    let ds = synth_layouts(n, size, &mut Rng::new(seed))?;
    let (images, labels) = export_idx(&ds, out, "synth")?;
    println!("wrote {}", images.display());
    println!("wrote {}", labels.display());
    Ok(0)
}
