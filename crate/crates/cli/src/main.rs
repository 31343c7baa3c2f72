mod manifest;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use dualbind_core::data::toxbench::{convert_toxbench, IndexColumns};
use dualbind_core::data::{
    cap_labels, compute_density, load_dataset_with, save_dataset, smiles_overlap, split_by_smiles,
    synth_generate, ComplexRecord, LoadOptions, SynthConfig,
};
use dualbind_core::metrics::{evaluate, latency_bench, write_predictions};
use dualbind_core::model::{Model, ModelConfig};
use dualbind_core::train::{
    load_checkpoint, prepare_all, save_checkpoint, save_history, Checkpoint, TrainConfig, Trainer,
    DEFAULT_CAP, FORMAT_VERSION,
};
use dualbind_core::Precision;
use serde::{Deserialize, Serialize};

use manifest::{artifacts, now_secs, write_atomic, RunManifest};

const THREADS_ENV: &str = "DUALBIND_THREADS";

#[derive(Parser)]
#[command(
    name = "dualbind",
    version,
    about = "Energy-based protein-ligand binding affinity model"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic complexes with oracle labels.
    Synth(SynthArgs),
    /// Partition a dataset by SMILES into train/val/test files.
    Split(SplitArgs),
    /// Train a model.
    Train(TrainArgs),
    /// Score a checkpoint on a labelled dataset.
    Eval(EvalArgs),
    /// Write per-complex predictions.
    Predict(PredictArgs),
    /// Time inference per complex.
    Bench(BenchArgs),
    /// Summarize a checkpoint or datasets.
    Inspect(InspectArgs),
    /// Convert a ToxBench-style index and atom tables to the dataset format.
    Convert(ConvertArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    n_complexes: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    poses_per_ligand: Option<usize>,
    /// JSON generator settings; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct SplitArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_delimiter = ',', default_values_t = [0.7, 0.15, 0.15])]
    fractions: Vec<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args, Clone)]
struct CapArgs {
    /// Labels and predictions above this value are set to it.
    #[arg(long, default_value_t = DEFAULT_CAP, allow_hyphen_values = true)]
    cap: f64,
    #[arg(long)]
    no_cap: bool,
}

impl CapArgs {
    fn threshold(&self) -> Result<Option<f64>> {
        if self.no_cap {
            return Ok(None);
        }
        if !self.cap.is_finite() {
            return Err(usage(format!("cap must be finite, got {}", self.cap)));
        }
        Ok(Some(self.cap))
    }
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    val: Option<PathBuf>,
    /// `desk`, `paper`, or a JSON file with `model` and `train` sections.
    #[arg(long, default_value = "desk")]
    config: String,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Score ligand-ligand pairs with protein atoms removed.
    #[arg(long)]
    ligand_only: bool,
    /// Continue from a checkpoint written by an earlier run.
    #[arg(long)]
    resume: Option<PathBuf>,
    #[arg(long)]
    threads: Option<usize>,
    #[command(flatten)]
    cap: CapArgs,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    #[command(flatten)]
    cap: CapArgs,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    cap: CapArgs,
}

#[derive(Clone, Copy, ValueEnum)]
enum PrecisionArg {
    F32,
    F64,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_delimiter = ',', default_values_t = [8, 32])]
    batch_sizes: Vec<usize>,
    #[arg(long, default_value_t = 3)]
    reps: usize,
    #[arg(long, value_enum, default_value = "f64")]
    precision: PrecisionArg,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct InspectArgs {
    #[arg(long, conflicts_with = "data")]
    ckpt: Option<PathBuf>,
    /// One or more dataset files; several are checked for SMILES overlap.
    #[arg(long, num_args = 1..)]
    data: Vec<PathBuf>,
}

#[derive(Args)]
struct ConvertArgs {
    #[arg(long)]
    index: PathBuf,
    #[arg(long)]
    structures: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "ID")]
    id_column: String,
    #[arg(long, default_value = "SMILES")]
    smiles_column: String,
    #[arg(long, default_value = "dG")]
    label_column: String,
    #[arg(long)]
    structure_column: Option<String>,
}

/// A bad invocation discovered after argument parsing.
#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

/// Model and training settings as one document.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RunConfig {
    model: ModelConfig,
    train: TrainConfig,
}

fn resolve_config(name: &str) -> Result<RunConfig> {
    match name {
        "desk" => Ok(RunConfig {
            model: ModelConfig::desk(),
            train: TrainConfig::desk(),
        }),
        "paper" => Ok(RunConfig {
            model: ModelConfig::paper(),
            train: TrainConfig::paper(),
        }),
        path => {
            let text = fs::read_to_string(path).map_err(|e| {
                usage(format!(
                    "config {path:?} is neither desk, paper nor a readable file: {e}"
                ))
            })?;
            serde_json::from_str(&text).with_context(|| format!("parsing config {path}"))
        }
    }
}

fn threads(flag: Option<usize>) -> Result<usize> {
    if let Some(t) = flag {
        return Ok(t.max(1));
    }
    match std::env::var(THREADS_ENV) {
        Ok(v) => v
            .parse::<usize>()
            .map(|t| t.max(1))
            .map_err(|_| usage(format!("{THREADS_ENV}={v:?} is not a thread count"))),
        Err(_) => Ok(1),
    }
}

fn load(path: &Path, cap: Option<f64>, ligand_only: bool) -> Result<Vec<ComplexRecord>> {
    let opts = LoadOptions {
        allow_ligand_only: ligand_only,
    };
    let records =
        load_dataset_with(path, opts).with_context(|| format!("loading {}", path.display()))?;
    Ok(match cap {
        Some(c) => cap_labels(&records, c),
        None => records,
    })
}

fn manifest(
    command: &str,
    config: serde_json::Value,
    seed: Option<u64>,
    threads: usize,
    started: u64,
) -> RunManifest {
    RunManifest {
        command: command.to_string(),
        argv: std::env::args().collect(),
        version: env!("CARGO_PKG_VERSION"),
        config,
        seed,
        threads,
        inputs: Vec::new(),
        outputs: Vec::new(),
        started_unix_secs: started,
        finished_unix_secs: 0,
    }
}

fn finish(mut m: RunManifest, inputs: &[&Path], outputs: &[&Path], path: &Path) -> Result<()> {
    m.inputs = artifacts(inputs)?;
    m.outputs = artifacts(outputs)?;
    m.finished_unix_secs = now_secs();
    m.save(path)
}

fn sibling_manifest(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".manifest.json");
    PathBuf::from(s)
}

fn cmd_synth(a: SynthArgs) -> Result<()> {
    let started = now_secs();
    let mut cfg = match &a.config {
        Some(p) => serde_json::from_str(
            &fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?,
        )
        .with_context(|| format!("parsing {}", p.display()))?,
        None => SynthConfig::default(),
    };
    if let Some(n) = a.n_complexes {
        cfg.n_complexes = n;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(p) = a.poses_per_ligand {
        cfg.poses_per_ligand = p;
    }
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    let records = synth_generate(&cfg)?;
    save_dataset(&a.out, &records)?;
    println!("wrote {} complexes to {}", records.len(), a.out.display());
    let m = manifest(
        "synth",
        serde_json::to_value(&cfg)?,
        Some(cfg.seed),
        1,
        started,
    );
    let inputs: Vec<&Path> = a.config.iter().map(PathBuf::as_path).collect();
    finish(m, &inputs, &[&a.out], &sibling_manifest(&a.out))
}

fn cmd_split(a: SplitArgs) -> Result<()> {
    let started = now_secs();
    dualbind_core::data::split::check_fractions(&a.fractions).map_err(|e| usage(e.to_string()))?;
    if a.fractions.len() != 3 {
        return Err(usage(format!(
            "expected 3 fractions, got {}",
            a.fractions.len()
        )));
    }
    let records = load(&a.data, None, true)?;
    let spec = split_by_smiles(&records, &a.fractions, a.seed)?;
    let parts = spec.apply(&records)?;
    fs::create_dir_all(&a.out_dir).with_context(|| format!("creating {}", a.out_dir.display()))?;
    let mut outputs = Vec::new();
    for (name, part) in dualbind_core::data::split::PARTITION_NAMES
        .iter()
        .zip(&parts)
    {
        let p = a.out_dir.join(format!("{name}.jsonl"));
        save_dataset(&p, part)?;
        println!("{name:<5} {:>6} records", part.len());
        outputs.push(p);
    }
    let refs: Vec<&[ComplexRecord]> = parts.iter().map(Vec::as_slice).collect();
    let overlap = smiles_overlap(&refs);
    if !overlap.is_empty() {
        bail!("split leaked {} SMILES across partitions", overlap.len());
    }
    let spec_path = a.out_dir.join("split.json");
    write_atomic(&spec_path, &serde_json::to_vec_pretty(&spec)?)?;
    outputs.push(spec_path);
    let cfg = serde_json::json!({ "fractions": a.fractions, "seed": a.seed });
    let m = manifest("split", cfg, Some(a.seed), 1, started);
    let outs: Vec<&Path> = outputs.iter().map(PathBuf::as_path).collect();
    finish(m, &[&a.data], &outs, &a.out_dir.join("manifest.json"))
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let started = now_secs();
    let threads = threads(a.threads)?;
    let resumed = match &a.resume {
        Some(p) => Some(load_checkpoint(p).with_context(|| format!("loading {}", p.display()))?),
        None => None,
    };
    let mut cfg = match &resumed {
        Some(c) => RunConfig {
            model: c.model.config.clone(),
            train: c
                .train_config
                .clone()
                .ok_or_else(|| usage("checkpoint has no training configuration to resume"))?,
        },
        None => resolve_config(&a.config)?,
    };
    if let Some(v) = a.lambda {
        cfg.train.lambda = v;
    }
    if let Some(v) = a.epochs {
        cfg.train.epochs = v;
    }
    if let Some(v) = a.seed {
        cfg.train.seed = v;
    }
    if let Some(v) = a.learning_rate {
        cfg.train.learning_rate = v;
    }
    if let Some(v) = a.batch_size {
        cfg.train.batch_size = v;
    }
    if a.ligand_only {
        cfg.model.ligand_only = true;
    }
    cfg.train.cap = a.cap.threshold()?;
    cfg.model.validate().map_err(|e| usage(e.to_string()))?;
    cfg.train.validate().map_err(|e| usage(e.to_string()))?;

    let cap = cfg.train.cap;
    let train = load(&a.train, cap, cfg.model.ligand_only)?;
    let val = match &a.val {
        Some(p) => load(p, cap, cfg.model.ligand_only)?,
        None => Vec::new(),
    };
    if train.is_empty() {
        bail!("{} holds no records", a.train.display());
    }
    let trainer = match resumed {
        Some(mut c) => {
            c.model.config = cfg.model.clone();
            Trainer::resume(c, cfg.train.clone())?
        }
        None => Trainer::new(Model::new(cfg.model.clone())?, cfg.train.clone())?,
    }
    .with_threads(threads);
    log::info!(
        "{} parameters, {} train / {} val records, starting after epoch {}",
        trainer.model.params.count(),
        train.len(),
        val.len(),
        trainer.epoch
    );
    let tp = prepare_all(&trainer.model, &train)?;
    let vp = prepare_all(&trainer.model, &val)?;
    let outcome = trainer.fit(&tp, &vp)?;

    fs::create_dir_all(&a.out_dir).with_context(|| format!("creating {}", a.out_dir.display()))?;
    let best = a.out_dir.join("best.dbnd");
    let last = a.out_dir.join("last.dbnd");
    let hist = a.out_dir.join("history.csv");
    save_checkpoint(&outcome.best, &best)?;
    save_checkpoint(&outcome.last, &last)?;
    save_history(&outcome.history, &hist)?;
    for r in &outcome.history {
        println!(
            "epoch {:>4}  lr {:.3e}  mse {:.4}  dsm {:.4}  val_rmse {}",
            r.epoch,
            r.lr,
            r.train_mse,
            r.train_dsm,
            r.val_rmse.map_or("-".into(), |v| format!("{v:.4}"))
        );
    }
    println!(
        "best epoch {} written to {}",
        outcome.best.epoch,
        best.display()
    );

    let m = manifest(
        "train",
        serde_json::to_value(&cfg)?,
        Some(cfg.train.seed),
        threads,
        started,
    );
    let mut inputs: Vec<&Path> = vec![&a.train];
    inputs.extend(a.val.as_deref());
    inputs.extend(a.resume.as_deref());
    finish(
        m,
        &inputs,
        &[&best, &last, &hist],
        &a.out_dir.join("manifest.json"),
    )
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let started = now_secs();
    let cap = a.cap.threshold()?;
    let ckpt = load_checkpoint(&a.ckpt).with_context(|| format!("loading {}", a.ckpt.display()))?;
    let records = load(&a.data, cap, ckpt.model.config.ligand_only)?;
    if records.len() < 2 {
        return Err(usage(format!(
            "{} needs at least 2 records to score",
            a.data.display()
        )));
    }
    let ev = evaluate(&ckpt.model, &records, cap)?;
    print!("{}", ev.report.table());
    fs::create_dir_all(&a.out_dir).with_context(|| format!("creating {}", a.out_dir.display()))?;
    let metrics = a.out_dir.join("metrics.csv");
    let preds = a.out_dir.join("predictions.csv");
    let mut buf = Vec::new();
    ev.report.write_csv(&mut buf)?;
    write_atomic(&metrics, &buf)?;
    let mut buf = Vec::new();
    write_predictions(&ev.predictions, &mut buf)?;
    write_atomic(&preds, &buf)?;
    let m = manifest("eval", serde_json::json!({ "cap": cap }), None, 1, started);
    finish(
        m,
        &[&a.ckpt, &a.data],
        &[&metrics, &preds],
        &a.out_dir.join("manifest.json"),
    )
}

fn cmd_predict(a: PredictArgs) -> Result<()> {
    let started = now_secs();
    let cap = a.cap.threshold()?;
    let ckpt = load_checkpoint(&a.ckpt).with_context(|| format!("loading {}", a.ckpt.display()))?;
    let records = load(&a.data, None, ckpt.model.config.ligand_only)?;
    let mut rows = Vec::with_capacity(records.len());
    for r in &records {
        let raw = ckpt
            .model
            .predict(r)
            .with_context(|| format!("complex {}", r.complex_id))?;
        let capped = cap.map_or(raw, |c| raw.min(c));
        rows.push(dualbind_core::metrics::PredictionRow {
            complex_id: r.complex_id.clone(),
            y: r.label,
            raw,
            capped,
        });
    }
    let mut buf = Vec::new();
    write_predictions(&rows, &mut buf)?;
    write_atomic(&a.out, &buf)?;
    println!("wrote {} predictions to {}", rows.len(), a.out.display());
    let m = manifest(
        "predict",
        serde_json::json!({ "cap": cap }),
        None,
        1,
        started,
    );
    finish(m, &[&a.ckpt, &a.data], &[&a.out], &sibling_manifest(&a.out))
}

fn cmd_bench(a: BenchArgs) -> Result<()> {
    let started = now_secs();
    if a.batch_sizes.contains(&0) {
        return Err(usage("batch sizes must be positive"));
    }
    let ckpt = load_checkpoint(&a.ckpt).with_context(|| format!("loading {}", a.ckpt.display()))?;
    let records = load(&a.data, None, ckpt.model.config.ligand_only)?;
    let precision = match a.precision {
        PrecisionArg::F32 => Precision::F32,
        PrecisionArg::F64 => Precision::F64,
    };
    let name = ckpt
        .train_config
        .as_ref()
        .map_or("custom", |t| t.name.as_str())
        .to_string();
    let report = latency_bench(
        &ckpt.model,
        &records,
        &a.batch_sizes,
        a.reps,
        &name,
        precision,
    )?;
    print!("{}", report.table());
    fs::create_dir_all(&a.out_dir).with_context(|| format!("creating {}", a.out_dir.display()))?;
    let out = a.out_dir.join("latency.csv");
    let mut buf = Vec::new();
    report.write_csv(&mut buf)?;
    write_atomic(&out, &buf)?;
    let cfg =
        serde_json::json!({ "batch_sizes": a.batch_sizes, "reps": a.reps, "precision": precision });
    let m = manifest("bench", cfg, None, 1, started);
    finish(
        m,
        &[&a.ckpt, &a.data],
        &[&out],
        &a.out_dir.join("manifest.json"),
    )
}

fn inspect_checkpoint(path: &Path) -> Result<()> {
    let c: Checkpoint =
        load_checkpoint(path).with_context(|| format!("loading {}", path.display()))?;
    println!("format version   {FORMAT_VERSION}");
    println!("parameters       {}", c.model.params.count());
    println!("epoch            {}", c.epoch);
    println!(
        "val rmse         {}",
        c.val_rmse.map_or("-".into(), |v| format!("{v:.4}"))
    );
    println!(
        "optimizer state  {}",
        if c.adam.is_some() { "yes" } else { "no" }
    );
    println!("config hash      {}", c.config_hash);
    println!("created          {}", c.created_unix_secs);
    println!(
        "model config     {}",
        serde_json::to_string(&c.model.config)?
    );
    if let Some(t) = &c.train_config {
        println!("train config     {}", serde_json::to_string(t)?);
    }
    Ok(())
}

fn inspect_data(paths: &[PathBuf]) -> Result<()> {
    let mut sets = Vec::new();
    for p in paths {
        let records = load(p, None, true)?;
        let labels: Vec<f64> = records.iter().map(|r| r.label).collect();
        let n = labels.len().max(1) as f64;
        let mean = labels.iter().sum::<f64>() / n;
        let min = labels.iter().copied().fold(f64::INFINITY, f64::min);
        let max = labels.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let smiles: std::collections::BTreeSet<&str> =
            records.iter().map(|r| r.smiles.as_str()).collect();
        let above = labels.iter().filter(|&&l| l >= DEFAULT_CAP).count();
        println!("{}", p.display());
        println!("  records        {}", records.len());
        println!("  unique SMILES  {}", smiles.len());
        println!("  labels         min {min:.3}  mean {mean:.3}  max {max:.3}");
        println!("  at/above cap   {above}");
        if !records.is_empty() {
            println!("  density        {:.6}", compute_density(&records)?);
        }
        sets.push(records);
    }
    if sets.len() > 1 {
        let refs: Vec<&[ComplexRecord]> = sets.iter().map(Vec::as_slice).collect();
        let overlap = smiles_overlap(&refs);
        println!("SMILES overlap   {}", overlap.len());
        if !overlap.is_empty() {
            bail!("{} SMILES appear in more than one file", overlap.len());
        }
    }
    Ok(())
}

fn cmd_inspect(a: InspectArgs) -> Result<()> {
    match (&a.ckpt, a.data.is_empty()) {
        (Some(c), _) => inspect_checkpoint(c),
        (None, false) => inspect_data(&a.data),
        (None, true) => Err(usage("inspect needs --ckpt or --data")),
    }
}

fn cmd_convert(a: ConvertArgs) -> Result<()> {
    let started = now_secs();
    let columns = IndexColumns {
        id: a.id_column,
        smiles: a.smiles_column,
        label: a.label_column,
        structure: a.structure_column,
    };
    let records = convert_toxbench(&a.index, a.structures.as_deref(), &columns)?;
    save_dataset(&a.out, &records)?;
    println!("converted {} complexes", records.len());
    let m = manifest("convert", serde_json::to_value(&columns)?, None, 1, started);
    finish(m, &[&a.index], &[&a.out], &sibling_manifest(&a.out))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Split(a) => cmd_split(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Predict(a) => cmd_predict(a),
        Command::Bench(a) => cmd_bench(a),
        Command::Inspect(a) => cmd_inspect(a),
        Command::Convert(a) => cmd_convert(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.is::<UsageError>() => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
