//! Experiment orchestration: pretraining, sweeps, online fine-tuning and
//! its ablations, evaluation, imputation benchmark and checkpoints.

mod checkpoint;
mod evaluate;
mod finetune;
mod impute_bench;
mod pretrain;
mod run;
mod sweep;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, Provenance, FORMAT_VERSION};
pub use evaluate::{cmd_evaluate, write_eval_csv, EvalReport, EvalSummary, TargetError};
pub use finetune::{
    check_stream, cmd_ablate, cmd_finetune, write_ablation_csv, write_run_metrics_csv,
    AblationKind, AblationRow, FinetuneConfig, OnlineLearner, OnlineStep, RunMetrics, RunSummary,
    RunTrace, FREEZE_GRID, LAMBDA_GRID,
};
pub use impute_bench::{impute_bench, ImputeBenchConfig, ImputeBenchReport};
pub use pretrain::{
    cmd_pretrain, load_dataset, load_with_pipeline, write_loss_curve, PretrainConfig,
    PretrainResult,
};
pub use run::{config_hash, create_run_dir, write_json};
pub use sweep::{cmd_sweep, write_sweep_csv, SweepCell, SweepGrid, SweepRow};
