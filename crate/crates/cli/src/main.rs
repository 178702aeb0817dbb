use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use lru_rtrl::bptt::{TrainConfig, Trainer, UpdateCadence};
use lru_rtrl::datapipe::{
    generate_synthetic, write_synthetic, GeneratorConfig, PipelineConfig, PreprocessConfig,
    SequenceData, VocabMode,
};
use lru_rtrl::harness::{
    cmd_ablate, cmd_evaluate, cmd_finetune, cmd_pretrain, cmd_sweep, create_run_dir, impute_bench,
    load_checkpoint, load_dataset, load_with_pipeline, save_checkpoint, write_ablation_csv,
    write_eval_csv, write_json, write_loss_curve, write_run_metrics_csv, write_sweep_csv,
    FinetuneConfig, ImputeBenchConfig, PretrainConfig, Provenance, SweepGrid,
};
use lru_rtrl::{Error, Result};

/// LRU sequence models: offline pretraining, online RTRL fine-tuning and
/// the supporting data pipeline.
#[derive(Parser)]
#[command(name = "lru-rtrl", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic emission/weather dataset with a distribution shift.
    GenData(GenDataArgs),
    /// Fit the preprocessing pipeline and report what it produces.
    Preprocess(PreprocessArgs),
    /// Train a network offline and write a checkpoint.
    Pretrain(PretrainArgs),
    /// Train every cell of an architecture/optimizer grid.
    Sweep(SweepArgs),
    /// Adapt a checkpoint online over a stream, next to a frozen copy.
    Finetune(FinetuneArgs),
    /// Anchor-strength and freeze-point ablations of online fine-tuning.
    Ablate(FinetuneArgs),
    /// Score a checkpoint's frozen predictions.
    Evaluate(EvaluateArgs),
    /// Compare rolling-median and KNN imputation on masked cells.
    ImputeBench(ImputeBenchArgs),
}

#[derive(Args)]
struct GenDataArgs {
    /// Output directory for the CSV files and the session manifest.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 5)]
    sessions: usize,
    #[arg(long, default_value_t = 7200)]
    duration_s: usize,
    #[arg(long, default_value_t = 0.211)]
    missing_rate: f64,
    /// Sessions at the end that carry the shift.
    #[arg(long, default_value_t = 1)]
    held_out: usize,
    #[arg(long, default_value_t = 1.3)]
    emission_gain: f64,
    #[arg(long, default_value_t = 10.0)]
    ambient_offset_c: f64,
    #[arg(long, default_value_t = 7)]
    seed: u64,
}

#[derive(Clone, Copy, ValueEnum)]
enum Vocab {
    Union,
    TrainOnly,
}

#[derive(Args)]
struct DataArgs {
    /// Directory holding emissions.csv and weather.csv.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 0.8)]
    train_fraction: f64,
    /// Rolling-median imputation window.
    #[arg(long, default_value_t = 5)]
    impute_window: usize,
    #[arg(long, value_enum, default_value = "union")]
    vocab: Vocab,
    /// Grid spacing in seconds.
    #[arg(long, default_value_t = 1)]
    grid_step: i64,
}

impl DataArgs {
    fn config(&self) -> PreprocessConfig {
        PreprocessConfig {
            pipeline: PipelineConfig {
                window: self.impute_window,
                vocab: match self.vocab {
                    Vocab::Union => VocabMode::Union,
                    Vocab::TrainOnly => VocabMode::TrainOnly,
                },
            },
            train_fraction: self.train_fraction,
            grid_step: self.grid_step,
        }
    }
}

#[derive(Args)]
struct OutArgs {
    /// Root under which a run directory is created.
    #[arg(long, default_value = "runs")]
    out: PathBuf,
}

#[derive(Args)]
struct PreprocessArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    out: OutArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Clone, Copy, ValueEnum)]
enum TrainerArg {
    Bptt,
    Rtrl,
}

impl From<TrainerArg> for Trainer {
    fn from(t: TrainerArg) -> Self {
        match t {
            TrainerArg::Bptt => Trainer::Bptt,
            TrainerArg::Rtrl => Trainer::Rtrl,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum CadenceArg {
    PerStep,
    PerWindow,
}

/// Global-norm clip threshold; `none` disables clipping.
#[derive(Clone, Copy)]
struct Clip(Option<f64>);

fn parse_clip(s: &str) -> std::result::Result<Clip, String> {
    if s.eq_ignore_ascii_case("none") {
        return Ok(Clip(None));
    }
    let v: f64 = s.parse().map_err(|e| format!("{s:?}: {e}"))?;
    if v > 0.0 {
        Ok(Clip(Some(v)))
    } else {
        Err("clip norm must be positive".into())
    }
}

/// Layer widths, comma-separated: `16` or `8,8,8`.
#[derive(Clone)]
struct Widths(Vec<usize>);

fn parse_widths(s: &str) -> std::result::Result<Widths, String> {
    s.split(',')
        .map(|w| w.trim().parse::<usize>().map_err(|e| format!("{w:?}: {e}")))
        .collect::<std::result::Result<_, _>>()
        .map(Widths)
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long, value_enum, default_value = "bptt")]
    trainer: TrainerArg,
    #[arg(long, default_value_t = 100_000)]
    steps: usize,
    #[arg(long, default_value_t = 256)]
    batch: usize,
    /// Training window length in steps.
    #[arg(long, default_value_t = 256)]
    window: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value = "0.5", value_parser = parse_clip)]
    clip: Clip,
    #[arg(long, default_value_t = 1.0)]
    huber_delta: f64,
    #[arg(long, default_value_t = 500)]
    eval_every: usize,
    #[arg(long, value_enum, default_value = "per-step")]
    rtrl_cadence: CadenceArg,
    /// Carry RTRL traces across window boundaries.
    #[arg(long)]
    keep_traces: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl TrainArgs {
    fn config(&self) -> TrainConfig {
        TrainConfig {
            trainer: self.trainer.into(),
            steps: self.steps,
            batch: self.batch,
            window: self.window,
            lr: self.lr,
            clip: self.clip.0,
            huber_delta: self.huber_delta,
            eval_every: self.eval_every,
            seed: self.seed,
            rtrl_cadence: match self.rtrl_cadence {
                CadenceArg::PerStep => UpdateCadence::PerStep,
                CadenceArg::PerWindow => UpdateCadence::PerWindow,
            },
            reset_traces_per_window: !self.keep_traces,
        }
    }
}

#[derive(Args)]
struct PretrainArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    out: OutArgs,
    #[command(flatten)]
    train: TrainArgs,
    /// State width of each layer, comma-separated.
    #[arg(long, default_value = "16", value_parser = parse_widths)]
    layers: Widths,
    #[arg(long, default_value_t = 0.9)]
    r_min: f64,
    #[arg(long, default_value_t = 0.999)]
    r_max: f64,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    out: OutArgs,
    #[command(flatten)]
    train: TrainArgs,
    /// Architectures separated by `;`, e.g. `8;16;8,8`. Defaults to the full grid.
    #[arg(long)]
    layer_grid: Option<String>,
    /// Comma-separated learning rates.
    #[arg(long)]
    lrs: Option<String>,
    /// Comma-separated clip norms; `none` disables clipping.
    #[arg(long)]
    clips: Option<String>,
    /// Comma-separated trainers.
    #[arg(long)]
    trainers: Option<String>,
    #[arg(long)]
    repeats: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Split {
    Train,
    Val,
}

#[derive(Args)]
struct StreamArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Directory holding emissions.csv and weather.csv.
    #[arg(long)]
    data: PathBuf,
    /// Which side of the checkpoint's session split to stream.
    #[arg(long, value_enum, default_value = "val")]
    split: Split,
}

impl StreamArgs {
    fn load(&self) -> Result<(lru_rtrl::harness::Checkpoint, SequenceData)> {
        let ckpt = load_checkpoint(&self.checkpoint)?;
        let (train, val) = load_with_pipeline(&self.data, &ckpt.preprocess, &ckpt.pipeline)?;
        let stream = match self.split {
            Split::Train => train,
            Split::Val => val,
        };
        Ok((ckpt, stream))
    }
}

#[derive(Args)]
struct FinetuneArgs {
    #[command(flatten)]
    stream: StreamArgs,
    #[command(flatten)]
    out: OutArgs,
    /// Anchor strength.
    #[arg(long = "lambda", default_value_t = 0.01)]
    lambda_reg: f64,
    /// Stop updating after this many stream steps.
    #[arg(long)]
    freeze_after: Option<usize>,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value = "0.5", value_parser = parse_clip)]
    clip: Clip,
    #[arg(long, default_value_t = 1.0)]
    huber_delta: f64,
    /// Penalize the squared distance to the pretrained weights.
    #[arg(long)]
    squared_anchor: bool,
    /// Start from the checkpoint's optimizer moments.
    #[arg(long)]
    carry_optimizer: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl FinetuneArgs {
    fn config(&self) -> FinetuneConfig {
        FinetuneConfig {
            lambda_reg: self.lambda_reg,
            freeze_after: self.freeze_after,
            lr: self.lr,
            clip: self.clip.0,
            huber_delta: self.huber_delta,
            seed: self.seed,
            squared_anchor: self.squared_anchor,
            carry_optimizer: self.carry_optimizer,
        }
    }
}

#[derive(Args)]
struct EvaluateArgs {
    #[command(flatten)]
    stream: StreamArgs,
    #[command(flatten)]
    out: OutArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct ImputeBenchArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    out: OutArgs,
    #[arg(long, default_value_t = 0.2)]
    mask_fraction: f64,
    /// Neighbours used by KNN imputation.
    #[arg(long, default_value_t = 20)]
    k: usize,
    #[arg(long, value_enum, default_value = "val")]
    split: Split,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn list<T>(s: &str, parse: impl Fn(&str) -> std::result::Result<T, String>) -> Result<Vec<T>> {
    s.split(',')
        .map(|x| parse(x.trim()).map_err(Error::Config))
        .collect()
}

fn sweep_grid(args: &SweepArgs) -> Result<SweepGrid> {
    let mut grid = SweepGrid::full();
    if let Some(s) = &args.layer_grid {
        grid.layers = s
            .split(';')
            .map(|w| parse_widths(w).map(|w| w.0).map_err(Error::Config))
            .collect::<Result<_>>()?;
    }
    if let Some(s) = &args.lrs {
        grid.lrs = list(s, |x| x.parse::<f64>().map_err(|e| format!("{x:?}: {e}")))?;
    }
    if let Some(s) = &args.clips {
        grid.clips = list(s, |x| parse_clip(x).map(|c| c.0))?;
    }
    if let Some(s) = &args.trainers {
        grid.trainers = list(s, |x| x.parse::<Trainer>().map_err(|e| e.to_string()))?;
    }
    if let Some(r) = args.repeats {
        grid.repeats = r;
    }
    Ok(grid)
}

fn summary(dir: &Path, command: &str, config: serde_json::Value, result: serde_json::Value) -> Result<()> {
    write_json(
        &dir.join("summary.json"),
        &json!({
            "command": command,
            "config": config,
            "provenance": Provenance::capture(),
            "result": result,
        }),
    )
}

fn to_value<T: serde::Serialize>(v: &T) -> serde_json::Value {
    serde_json::to_value(v).expect("serializable")
}

fn run(cli: Cli) -> Result<serde_json::Value> {
    match cli.command {
        Command::GenData(a) => {
            let mut cfg = GeneratorConfig {
                sessions: a.sessions,
                duration_s: a.duration_s,
                missing_rate: a.missing_rate,
                seed: a.seed,
                ..GeneratorConfig::default()
            };
            cfg.shift.held_out = a.held_out;
            cfg.shift.emission_gain = a.emission_gain;
            cfg.shift.ambient_offset_c = a.ambient_offset_c;
            let data = generate_synthetic(&cfg)?;
            write_synthetic(&data, &a.out)?;
            Ok(json!({
                "out": a.out,
                "rows": data.emissions.len(),
                "weather_hours": data.weather.len(),
                "sessions": data.manifest.sessions.len(),
            }))
        }
        Command::Preprocess(a) => {
            let cfg = a.data.config();
            let prepared = load_dataset(&a.data.data, &cfg)?;
            let dir = create_run_dir(&a.out.out, "preprocess", &(&cfg, a.seed))?;
            write_json(&dir.join("pipeline.json"), &prepared.pipeline)?;
            let result = json!({
                "train_rows": prepared.train.len(),
                "train_sessions": prepared.train.sessions.len(),
                "val_rows": prepared.val.len(),
                "val_sessions": prepared.val.sessions.len(),
                "features": prepared.pipeline.feature_names(),
                "targets": prepared.pipeline.target_names(),
            });
            summary(&dir, "preprocess", json!({"preprocess": cfg, "seed": a.seed}), result.clone())?;
            Ok(json!({"run_dir": dir, "result": result}))
        }
        Command::Pretrain(a) => {
            let pre = a.data.config();
            let prepared = load_dataset(&a.data.data, &pre)?;
            let cfg = PretrainConfig {
                widths: a.layers.0.clone(),
                r_min: a.r_min,
                r_max: a.r_max,
                train: a.train.config(),
            };
            let dir = create_run_dir(&a.out.out, "pretrain", &(&pre, &cfg))?;
            let result = cmd_pretrain(&prepared, &pre, &cfg, Provenance::capture())?;
            save_checkpoint(&result.checkpoint, &dir.join("checkpoint.json"))?;
            write_loss_curve(&dir.join("loss_curve.csv"), &result.outcome.curve)?;
            let res = json!({
                "best_val_loss": result.outcome.best_val_loss,
                "best_step": result.outcome.best_step,
                "diverged_at": result.outcome.diverged_at,
                "parameters": result.checkpoint.network.num_params(),
            });
            summary(&dir, "pretrain", json!({"preprocess": pre, "pretrain": cfg}), res.clone())?;
            Ok(json!({"run_dir": dir, "result": res}))
        }
        Command::Sweep(a) => {
            let pre = a.data.config();
            let prepared = load_dataset(&a.data.data, &pre)?;
            let grid = sweep_grid(&a)?;
            let base = a.train.config();
            let config = json!({
                "preprocess": pre,
                "base": base,
                "layers": grid.layers,
                "lrs": grid.lrs,
                "clips": grid.clips,
                "trainers": grid.trainers,
                "repeats": grid.repeats,
            });
            let dir = create_run_dir(&a.out.out, "sweep", &config)?;
            let rows = cmd_sweep(&prepared, &grid, &base);
            write_sweep_csv(&dir.join("sweep.csv"), &rows)?;
            let failed = rows.iter().filter(|r| r.error.is_some()).count();
            let res = json!({"cells": rows.len(), "failed": failed});
            summary(&dir, "sweep", config, res.clone())?;
            Ok(json!({"run_dir": dir, "result": res}))
        }
        Command::Finetune(a) => {
            let (ckpt, stream) = a.stream.load()?;
            let cfg = a.config();
            let dir = create_run_dir(&a.out.out, "finetune", &cfg)?;
            let metrics = cmd_finetune(&ckpt, &stream, &cfg)?;
            write_run_metrics_csv(&dir.join("metrics.csv"), &metrics)?;
            let res = to_value(&metrics.summary());
            summary(&dir, "finetune", json!({"finetune": cfg, "checkpoint": a.stream.checkpoint}), res.clone())?;
            Ok(json!({"run_dir": dir, "result": res}))
        }
        Command::Ablate(a) => {
            let (ckpt, stream) = a.stream.load()?;
            let cfg = a.config();
            let dir = create_run_dir(&a.out.out, "ablate", &cfg)?;
            let rows = cmd_ablate(&ckpt, &stream, &cfg)?;
            write_ablation_csv(&dir.join("ablation.csv"), &rows)?;
            let res = to_value(&rows);
            summary(&dir, "ablate", json!({"base": cfg, "checkpoint": a.stream.checkpoint}), res.clone())?;
            Ok(json!({"run_dir": dir, "result": res}))
        }
        Command::Evaluate(a) => {
            let (ckpt, stream) = a.stream.load()?;
            let config = json!({"checkpoint": a.stream.checkpoint, "seed": a.seed});
            let dir = create_run_dir(&a.out.out, "evaluate", &config)?;
            let report = cmd_evaluate(&ckpt, &stream)?;
            write_eval_csv(&dir.join("predictions.csv"), &stream, &report)?;
            let res = to_value(&report.summary);
            summary(&dir, "evaluate", config, res.clone())?;
            Ok(json!({"run_dir": dir, "result": res}))
        }
        Command::ImputeBench(a) => {
            let pre = a.data.config();
            let prepared = load_dataset(&a.data.data, &pre)?;
            let cfg = ImputeBenchConfig {
                mask_fraction: a.mask_fraction,
                window: a.data.impute_window,
                k: a.k,
                seed: a.seed,
            };
            let dir = create_run_dir(&a.out.out, "impute-bench", &(&pre, &cfg))?;
            let table = match a.split {
                Split::Train => &prepared.train_table,
                Split::Val => &prepared.val_table,
            };
            let report = impute_bench(table, &prepared.pipeline, &cfg)?;
            let res = to_value(&report);
            summary(&dir, "impute-bench", json!({"preprocess": pre, "bench": cfg}), res.clone())?;
            Ok(json!({"run_dir": dir, "result": res}))
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(out) => {
            // A closed stdout (e.g. piped into `head`) is not a failure of the run.
            let _ = writeln!(std::io::stdout(), "{}", serde_json::to_string_pretty(&out).expect("json"));
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", json!({"error": e.category(), "message": e.to_string()}));
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
