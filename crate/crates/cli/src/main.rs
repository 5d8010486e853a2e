use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use gesture_core::augment::{augment_dataset, AugmentConfig};
use gesture_core::changepoint::{PeltConfig, Penalty};
use gesture_core::nn::{load_model, save_model, CellKind, ModelConfig, RmsProp};
use gesture_core::pipeline::{self, evaluate, grid_search, prepare_examples, TrainConfig};
use gesture_core::preprocess::{fit_standardizer, prepare, to_planar_dataset, Standardizer};
use gesture_core::seqdata::{self, filter_short, load_dataset, save_dataset, synth_dataset, Dataset, SynthConfig};
use gesture_core::stream::{replay, StreamConfig};
use gesture_serve::ServerConfig;
use serde::Serialize;
use serde_json::json;

#[derive(Parser)]
#[command(name = "gesture", version, about = "Head-gesture (nod / shake / other) recognition workflows")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a labelled synthetic dataset
    Synth(SynthArgs),
    /// Drop short sequences and make a stratified train/test split
    Split(SplitArgs),
    /// Time-warp augmentation
    Augment(AugmentArgs),
    /// Drop the third channel, fit the standardizer and write model inputs
    Preprocess(PreprocessArgs),
    /// Train a model
    Train(TrainArgs),
    /// Evaluate a model on augmented and raw test data
    Eval(EvalArgs),
    /// Cross-validated grid search over cell type and hidden size
    Grid(GridArgs),
    /// Stream a dataset through the sliding-window predictor
    Replay(ReplayArgs),
    /// Serve streaming predictions over WebSocket
    Serve(ServeArgs),
}

#[derive(Args, Serialize)]
struct SynthArgs {
    #[arg(long, default_value_t = 300)]
    per_class: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long, default_value_t = seqdata::MIN_LEN)]
    min_len: usize,
    #[arg(long, default_value_t = seqdata::MAX_LEN)]
    max_len: usize,
    #[arg(long, default_value_t = 0.01)]
    noise_std: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct SplitArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long, default_value_t = 0.1)]
    test_frac: f64,
    #[arg(long, default_value_t = seqdata::MIN_LEN)]
    min_len: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long)]
    train_out: PathBuf,
    #[arg(long)]
    test_out: PathBuf,
}

#[derive(Args, Serialize)]
struct AugmentArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Change-point penalty: "auto" or a non-negative number
    #[arg(long, default_value = "auto")]
    pelt_penalty: String,
    #[arg(long, default_value_t = 30)]
    delta_alpha: usize,
    #[arg(long, default_value_t = 4)]
    delta_beta: usize,
}

#[derive(Args, Serialize)]
struct PreprocessArgs {
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    test: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args, Serialize)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "gru")]
    cell: CellKind,
    #[arg(long, default_value_t = 32)]
    hidden: usize,
    #[arg(long, default_value_t = 10)]
    epochs: usize,
    #[arg(long, default_value_t = 80)]
    batch: usize,
    #[arg(long, default_value_t = 0.1)]
    validation_frac: f64,
    #[arg(long, default_value_t = 0.001)]
    learning_rate: f64,
    /// Seeds both weight initialization and shuffling
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Standardizer JSON from `preprocess`; fitted on the training part if omitted
    #[arg(long)]
    standardizer: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    /// Augmented test set
    #[arg(long)]
    data: PathBuf,
    /// Unaugmented test set
    #[arg(long)]
    raw_test: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct GridArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "gru,lstm")]
    cells: Vec<CellKind>,
    #[arg(long, value_delimiter = ',', default_value = "8,16,32")]
    hidden: Vec<usize>,
    #[arg(long, default_value_t = 5)]
    folds: usize,
    #[arg(long, default_value_t = 10)]
    epochs: usize,
    #[arg(long, default_value_t = 80)]
    batch: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Cross-validate on a stratified fraction of the data
    #[arg(long)]
    subsample: Option<f64>,
}

#[derive(Args, Serialize)]
struct ReplayArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 15)]
    stride: usize,
    #[arg(long)]
    warm_start: bool,
}

#[derive(Args, Serialize)]
struct ServeArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long, default_value = "127.0.0.1:8080")]
    bind: SocketAddr,
    #[arg(long, default_value_t = 15)]
    stride: usize,
    #[arg(long)]
    warm_start: bool,
    #[arg(long, default_value_t = 120)]
    idle_timeout_s: u64,
}

fn print_json(value: &impl Serialize) -> Result<()> {
    let mut out = io::stdout().lock();
    serde_json::to_writer(&mut out, value)?;
    writeln!(out)?;
    Ok(())
}

fn print_config(command: &str, args: &impl Serialize) -> Result<()> {
    print_json(&json!({ "command": command, "config": args }))
}

fn load(path: &Path) -> Result<Dataset> {
    load_dataset(path).with_context(|| format!("reading dataset {}", path.display()))
}

fn save(d: &Dataset, path: &Path) -> Result<()> {
    save_dataset(d, path).with_context(|| format!("writing dataset {}", path.display()))
}

fn parse_penalty(s: &str) -> Result<Penalty> {
    if s == "auto" {
        return Ok(Penalty::Auto);
    }
    let p: f64 = s.parse().with_context(|| format!("--pelt-penalty must be \"auto\" or a number, got {s:?}"))?;
    if !(p >= 0.0 && p.is_finite()) {
        bail!("--pelt-penalty must be >= 0, got {p}");
    }
    Ok(Penalty::Fixed(p))
}

fn check_frac(name: &str, v: f64) -> Result<()> {
    if !(0.0..1.0).contains(&v) {
        bail!("{name} must be in [0, 1), got {v}");
    }
    Ok(())
}

fn synth(a: SynthArgs) -> Result<()> {
    let cfg = SynthConfig {
        per_class_count: a.per_class,
        length_range: (a.min_len, a.max_len),
        noise_std: a.noise_std,
        seed: a.seed,
        ..SynthConfig::default()
    };
    let d = synth_dataset(&cfg)?;
    save(&d, &a.out)?;
    print_json(&json!({ "sequences": d.len(), "class_counts": d.class_counts() }))
}

fn split(a: SplitArgs) -> Result<()> {
    check_frac("--test-frac", a.test_frac)?;
    let d = load(&a.input)?;
    let kept = filter_short(&d, a.min_len);
    let (train, test) = seqdata::split(&kept, a.test_frac, a.seed)?;
    save(&train, &a.train_out)?;
    save(&test, &a.test_out)?;
    print_json(&json!({
        "input": d.len(),
        "dropped_short": d.len() - kept.len(),
        "train": train.len(),
        "test": test.len(),
        "train_class_counts": train.class_counts(),
        "test_class_counts": test.class_counts(),
    }))
}

fn augment(a: AugmentArgs) -> Result<()> {
    let pelt = PeltConfig { penalty: parse_penalty(&a.pelt_penalty)?, ..PeltConfig::default() };
    if a.delta_alpha == 0 || a.delta_beta == 0 {
        bail!("--delta-alpha and --delta-beta must be >= 1");
    }
    let cfg = AugmentConfig { delta_alpha: a.delta_alpha, delta_beta: a.delta_beta, ..AugmentConfig::default() };
    let d = load(&a.input)?;
    let out = augment_dataset(&d, &cfg, &pelt)?;
    save(&out, &a.out)?;
    print_json(&json!({ "input": d.len(), "output": out.len(), "class_counts": out.class_counts() }))
}

fn write_inputs(d: &Dataset, s: &Standardizer, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    for seq in &d.sequences {
        let input = prepare(seq, s, seqdata::MAX_LEN)?;
        serde_json::to_writer(
            &mut w,
            &json!({ "label": seq.label, "true_len": input.true_len, "values": input.values }),
        )?;
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

fn preprocess(a: PreprocessArgs) -> Result<()> {
    let train = to_planar_dataset(&load(&a.train)?);
    let test = to_planar_dataset(&load(&a.test)?);
    let s = fit_standardizer(&train)?;
    fs::create_dir_all(&a.out_dir).with_context(|| format!("creating {}", a.out_dir.display()))?;
    save(&train, &a.out_dir.join("train.jsonl"))?;
    save(&test, &a.out_dir.join("test.jsonl"))?;
    fs::write(a.out_dir.join("standardizer.json"), serde_json::to_string_pretty(&s)?)?;
    write_inputs(&train, &s, &a.out_dir.join("train_inputs.jsonl"))?;
    write_inputs(&test, &s, &a.out_dir.join("test_inputs.jsonl"))?;
    print_json(&json!({ "train": train.len(), "test": test.len(), "standardizer": s }))
}

fn train(a: TrainArgs) -> Result<()> {
    check_frac("--validation-frac", a.validation_frac)?;
    if a.batch == 0 || a.hidden == 0 {
        bail!("--batch and --hidden must be >= 1");
    }
    if !(a.learning_rate > 0.0 && a.learning_rate.is_finite()) {
        bail!("--learning-rate must be positive");
    }
    let standardizer = match &a.standardizer {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            Some(serde_json::from_str(&text).with_context(|| format!("parsing standardizer {}", p.display()))?)
        }
        None => None,
    };
    let d = load(&a.data)?;
    let cfg = ModelConfig::new(a.cell, a.hidden).with_seed(a.seed);
    let tcfg = TrainConfig {
        epochs: a.epochs,
        batch_size: a.batch,
        validation_frac: a.validation_frac,
        seed: a.seed,
        shuffle: true,
        optimizer: RmsProp { learning_rate: a.learning_rate, ..RmsProp::default() },
    };
    let outcome = pipeline::fit(&cfg, &tcfg, &d, standardizer, |m| {
        let _ = print_json(m);
    })?;
    save_model(&outcome.model, &a.out).with_context(|| format!("writing model {}", a.out.display()))?;
    let last = outcome.history.last();
    print_json(&json!({
        "model": a.out,
        "config": cfg,
        "params": cfg.param_count(),
        "standardizer": outcome.model.standardizer,
        "final_train_acc": last.map(|m| m.train_acc),
        "final_val_acc": last.and_then(|m| m.val_acc),
    }))
}

fn eval(a: EvalArgs) -> Result<()> {
    let model = load_model(&a.model).with_context(|| format!("loading model {}", a.model.display()))?;
    let run = |path: &Path| -> Result<pipeline::EvalReport> {
        let d = load(path)?;
        let ex = prepare_examples(&d, &model.standardizer, model.config.time_steps)?;
        Ok(evaluate(&model, &ex)?)
    };
    let augmented = run(&a.data)?;
    let raw = a.raw_test.as_deref().map(run).transpose()?;
    print_json(&json!({ "config": model.config, "augmented_test": augmented, "raw_test": raw }))
}

fn grid(a: GridArgs) -> Result<()> {
    if a.cells.is_empty() || a.hidden.is_empty() {
        bail!("grid needs at least one cell type and one hidden size");
    }
    if a.batch == 0 || a.hidden.contains(&0) {
        bail!("--batch and --hidden values must be >= 1");
    }
    let mut d = load(&a.data)?;
    if let Some(frac) = a.subsample {
        if !(frac > 0.0 && frac <= 1.0) {
            bail!("--subsample must be in (0, 1], got {frac}");
        }
        if frac < 1.0 {
            d = seqdata::split(&d, frac, a.seed)?.1;
        }
    }
    let tcfg = TrainConfig { epochs: a.epochs, batch_size: a.batch, seed: a.seed, ..TrainConfig::default() };
    let rows = grid_search(&a.cells, &a.hidden, &d, a.folds, &tcfg, a.seed, |row| {
        let _ = print_json(&json!({ "evaluated": row }));
    })?;
    print_json(&json!({ "examples": d.len(), "ranked": rows, "best": rows.first() }))
}

fn replay_cmd(a: ReplayArgs) -> Result<()> {
    let model = Arc::new(load_model(&a.model).with_context(|| format!("loading model {}", a.model.display()))?);
    let cfg = StreamConfig { buffer_len: model.config.time_steps, stride: a.stride, warm_start: a.warm_start };
    let d = load(&a.data)?;
    for e in replay(model, cfg, &d)? {
        let [nod, shake, other] = e.probs;
        print_json(&json!({
            "sequence": e.sequence,
            "sample_index": e.sample_index,
            "probs": { "nod": nod, "shake": shake, "other": other },
            "label": e.label,
        }))?;
    }
    Ok(())
}

async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let term = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending().await,
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {}
        _ = term => {}
    }
}

fn serve_cmd(a: ServeArgs) -> Result<()> {
    let model = Arc::new(load_model(&a.model).with_context(|| format!("loading model {}", a.model.display()))?);
    let cfg = ServerConfig {
        stream: StreamConfig { buffer_len: model.config.time_steps, stride: a.stride, warm_start: a.warm_start },
        idle_timeout: Duration::from_secs(a.idle_timeout_s),
    };
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async {
        let listener = tokio::net::TcpListener::bind(a.bind).await.with_context(|| format!("binding {}", a.bind))?;
        eprintln!("listening on ws://{}/ws", listener.local_addr()?);
        gesture_serve::serve(listener, model, cfg, shutdown_signal()).await?;
        Ok(())
    })
}

fn main() -> Result<()> {
    tracing_subscriber::fmt()
        .with_writer(io::stderr)
        .with_env_filter(tracing_subscriber::EnvFilter::from_default_env())
        .init();
    match Cli::parse().command {
        Command::Synth(a) => print_config("synth", &a).and_then(|_| synth(a)),
        Command::Split(a) => print_config("split", &a).and_then(|_| split(a)),
        Command::Augment(a) => print_config("augment", &a).and_then(|_| augment(a)),
        Command::Preprocess(a) => print_config("preprocess", &a).and_then(|_| preprocess(a)),
        Command::Train(a) => print_config("train", &a).and_then(|_| train(a)),
        Command::Eval(a) => print_config("eval", &a).and_then(|_| eval(a)),
        Command::Grid(a) => print_config("grid", &a).and_then(|_| grid(a)),
        Command::Replay(a) => print_config("replay", &a).and_then(|_| replay_cmd(a)),
        Command::Serve(a) => print_config("serve", &a).and_then(|_| serve_cmd(a)),
    }
}
