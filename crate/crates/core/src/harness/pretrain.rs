use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::checkpoint::{Checkpoint, Provenance, FORMAT_VERSION};
use crate::bptt::{train, LossRecord, TrainConfig, TrainOutcome};
use crate::datapipe::{
    apply_pipeline, join_weather, load_emission_csv, load_weather_csv, preprocess,
    resample_to_grid, split_sessions, FittedPipeline, PreprocessConfig, Prepared, SequenceData,
    DEFAULT_SESSION_GAP_S, EMISSIONS_FILE, WEATHER_FILE,
};
use crate::error::{Error, Result};
use crate::lru::{LruNetwork, NetworkConfig};

/// Reads `emissions.csv` and `weather.csv` from `dir` and fits a pipeline.
pub fn load_dataset(dir: &Path, config: &PreprocessConfig) -> Result<Prepared> {
    let emissions = load_emission_csv(&dir.join(EMISSIONS_FILE), DEFAULT_SESSION_GAP_S)?;
    let weather = load_weather_csv(&dir.join(WEATHER_FILE))?;
    preprocess(&emissions, &weather, config)
}

/// Training and validation matrices built with an existing pipeline.
pub fn load_with_pipeline(
    dir: &Path,
    config: &PreprocessConfig,
    pipeline: &FittedPipeline,
) -> Result<(SequenceData, SequenceData)> {
    let emissions = load_emission_csv(&dir.join(EMISSIONS_FILE), DEFAULT_SESSION_GAP_S)?;
    let weather = load_weather_csv(&dir.join(WEATHER_FILE))?;
    let joined = join_weather(&resample_to_grid(&emissions, config.grid_step)?, &weather)?;
    let (train, val) = split_sessions(&joined, config.train_fraction)?;
    Ok((apply_pipeline(pipeline, &train)?, apply_pipeline(pipeline, &val)?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainConfig {
    pub widths: Vec<usize>,
    pub r_min: f64,
    pub r_max: f64,
    pub train: TrainConfig,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            widths: vec![16],
            r_min: 0.9,
            r_max: 0.999,
            train: TrainConfig::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct PretrainResult {
    pub checkpoint: Checkpoint,
    pub outcome: TrainOutcome,
}

/// Initializes a network from `cfg.train.seed`, trains it and packs the
/// best-validation parameters into a checkpoint.
pub fn cmd_pretrain(
    prepared: &Prepared,
    preprocess: &PreprocessConfig,
    cfg: &PretrainConfig,
    provenance: Provenance,
) -> Result<PretrainResult> {
    let network_config = NetworkConfig {
        input_dim: prepared.train.features.ncols(),
        widths: cfg.widths.clone(),
        output_dim: prepared.train.targets.ncols(),
        r_min: cfg.r_min,
        r_max: cfg.r_max,
    };
    let net = LruNetwork::init(&network_config, cfg.train.seed)?;
    let outcome = train(net, &prepared.train, &prepared.val, &cfg.train)?;
    let checkpoint = Checkpoint {
        format_version: FORMAT_VERSION,
        network_config,
        network: outcome.network.clone(),
        optimizer: Some(outcome.optimizer.clone()),
        pipeline: prepared.pipeline.clone(),
        preprocess: preprocess.clone(),
        train_config: cfg.train.clone(),
        seed: cfg.train.seed,
        best_val_loss: Some(outcome.best_val_loss),
        best_step: Some(outcome.best_step),
        provenance,
    };
    Ok(PretrainResult {
        checkpoint,
        outcome,
    })
}

/// `step,train_loss,val_loss`, empty cells where a loss was not measured.
pub fn write_loss_curve(path: &Path, curve: &[LossRecord]) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "step,train_loss,val_loss")?;
    let cell = |x: Option<f64>| x.map(|v| format!("{v:.16e}")).unwrap_or_default();
    for r in curve {
        writeln!(out, "{},{},{}", r.step, cell(r.train_loss), cell(r.val_loss))?;
    }
    out.flush().map_err(Error::from)
}
