use std::io::Write;
use std::path::Path;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::checkpoint::Checkpoint;
use crate::datapipe::SequenceData;
use crate::error::{Error, Result};
use crate::lru::LruNetwork;
use crate::optim::{clip_global_norm, AdamConfig, AdamState, AnchorConfig, Huber};
use crate::rtrl::{RtrlStepper, StepGradient};

pub const LAMBDA_GRID: [f64; 4] = [0.0, 0.001, 0.01, 0.1];
pub const FREEZE_GRID: [usize; 3] = [1000, 2000, 3000];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinetuneConfig {
    /// Anchor strength; 0 disables the pull toward the pretrained weights.
    pub lambda_reg: f64,
    /// Update only during the first `n` stream steps. `Some(0)` never updates.
    pub freeze_after: Option<usize>,
    pub lr: f64,
    pub clip: Option<f64>,
    pub huber_delta: f64,
    pub seed: u64,
    /// Use the squared anchor penalty instead of the plain norm.
    pub squared_anchor: bool,
    /// Continue from the checkpoint's Adam moments instead of fresh ones.
    pub carry_optimizer: bool,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        Self {
            lambda_reg: 0.01,
            freeze_after: None,
            lr: 1e-3,
            clip: Some(0.5),
            huber_delta: 1.0,
            seed: 0,
            squared_anchor: false,
            carry_optimizer: false,
        }
    }
}

/// Losses of one online step. The predictions behind them are available
/// from [`OnlineLearner::frozen_prediction`] and
/// [`OnlineLearner::tuned_prediction`] until the next step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OnlineStep {
    pub frozen_loss: f64,
    pub tuned_loss: f64,
    /// `‖θ − θ_pre‖₂` after this step's update.
    pub distance: f64,
    pub updated: bool,
}

/// Runs a frozen copy and an RTRL-adapted copy of a network side by side.
/// Each step predicts first, then learns from the revealed target.
pub struct OnlineLearner {
    frozen: LruNetwork,
    tuned: LruNetwork,
    frozen_stepper: RtrlStepper,
    tuned_stepper: RtrlStepper,
    theta: Vec<f64>,
    flat_grad: Vec<f64>,
    grad: StepGradient,
    dl_dy: Vec<f64>,
    adam: AdamState,
    anchor: AnchorConfig,
    huber: Huber,
    clip: Option<f64>,
    freeze_after: Option<usize>,
    steps_seen: usize,
    updates: usize,
}

impl OnlineLearner {
    pub fn new(net: &LruNetwork, cfg: &FinetuneConfig, carried: Option<&AdamState>) -> Result<Self> {
        net.validate()?;
        if !(cfg.lr >= 0.0 && cfg.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate must be >= 0, got {}", cfg.lr)));
        }
        if cfg.clip.is_some_and(|c| !(c > 0.0)) {
            return Err(Error::Config("clip norm must be positive".into()));
        }
        let theta = net.flatten();
        let mut anchor = AnchorConfig::new(theta.clone(), cfg.lambda_reg)?;
        anchor.squared = cfg.squared_anchor;
        let adam = match carried {
            Some(state) if cfg.carry_optimizer => {
                if state.len() != theta.len() {
                    return Err(Error::Compatibility(format!(
                        "optimizer state has {} entries for {} parameters",
                        state.len(),
                        theta.len()
                    )));
                }
                let mut state = state.clone();
                state.config.lr = cfg.lr;
                state
            }
            _ => AdamState::new(theta.len(), AdamConfig::with_lr(cfg.lr)),
        };
        Ok(Self {
            frozen: net.clone(),
            tuned: net.clone(),
            frozen_stepper: RtrlStepper::new(net),
            tuned_stepper: RtrlStepper::new(net),
            flat_grad: vec![0.0; theta.len()],
            grad: StepGradient::zeros_like(net),
            dl_dy: vec![0.0; net.output_dim()],
            theta,
            adam,
            anchor,
            huber: Huber::new(cfg.huber_delta)?,
            clip: cfg.clip,
            freeze_after: cfg.freeze_after,
            steps_seen: 0,
            updates: 0,
        })
    }

    /// Zeroes hidden states and traces of both copies (a new session starts).
    pub fn reset_sequence(&mut self) {
        self.frozen_stepper.reset();
        self.tuned_stepper.reset();
    }

    fn updating(&self) -> bool {
        self.freeze_after.is_none_or(|n| self.steps_seen < n)
    }

    pub fn step(&mut self, u: &[f64], y: &[f64]) -> Result<OnlineStep> {
        let frozen_pred = self.frozen_stepper.advance_frozen(&self.frozen, u)?;
        let frozen_loss = self.huber.step_loss(frozen_pred, y);
        let updating = self.updating();
        let pred = if updating {
            self.tuned_stepper.advance(&self.tuned, u)?
        } else {
            self.tuned_stepper.advance_frozen(&self.tuned, u)?
        };
        let tuned_loss = self.huber.step_loss(pred, y);
        if updating {
            self.huber.step_gradient(pred, y, 1.0, &mut self.dl_dy);
            self.grad.clear();
            self.tuned_stepper
                .accumulate_gradient(&self.tuned, &self.dl_dy, &mut self.grad)?;
            self.grad.write_flat(&mut self.flat_grad);
            self.anchor.add_gradient(&self.theta, &mut self.flat_grad)?;
            clip_global_norm(&mut self.flat_grad, self.clip);
            self.adam
                .step(&mut self.theta, &self.flat_grad)
                .map_err(|e| match e {
                    Error::Training { message, .. } => Error::Training {
                        batch: self.steps_seen,
                        message,
                    },
                    other => other,
                })?;
            self.tuned.load_flat(&self.theta)?;
            self.updates += 1;
        }
        self.steps_seen += 1;
        Ok(OnlineStep {
            frozen_loss,
            tuned_loss,
            distance: self.anchor.distance(&self.theta),
            updated: updating,
        })
    }

    pub fn frozen_prediction(&self) -> &[f64] {
        self.frozen_stepper.prediction()
    }

    pub fn tuned_prediction(&self) -> &[f64] {
        self.tuned_stepper.prediction()
    }

    pub fn network(&self) -> &LruNetwork {
        &self.tuned
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn steps_seen(&self) -> usize {
        self.steps_seen
    }

    pub fn updates(&self) -> usize {
        self.updates
    }

    pub fn anchor(&self) -> &AnchorConfig {
        &self.anchor
    }
}

/// Per-step record of one of the two runs.
#[derive(Debug, Clone, PartialEq)]
pub struct RunTrace {
    /// `steps × targets`
    pub predictions: Array2<f64>,
    pub losses: Vec<f64>,
    pub cumulative: Vec<f64>,
}

impl RunTrace {
    fn new(steps: usize, outputs: usize) -> Self {
        Self {
            predictions: Array2::zeros((steps, outputs)),
            losses: Vec::with_capacity(steps),
            cumulative: Vec::with_capacity(steps),
        }
    }

    fn push(&mut self, row: usize, prediction: &[f64], loss: f64) {
        self.predictions
            .row_mut(row)
            .iter_mut()
            .zip(prediction)
            .for_each(|(d, s)| *d = *s);
        let total = self.total() + loss;
        self.losses.push(loss);
        self.cumulative.push(total);
    }

    pub fn total(&self) -> f64 {
        self.cumulative.last().copied().unwrap_or(0.0)
    }

    pub fn mean(&self) -> f64 {
        self.total() / self.losses.len().max(1) as f64
    }
}

/// Paired frozen and fine-tuned traces over one stream.
#[derive(Debug, Clone)]
pub struct RunMetrics {
    pub timestamps: Vec<i64>,
    pub target_names: Vec<String>,
    pub targets: Array2<f64>,
    pub frozen: RunTrace,
    pub tuned: RunTrace,
    /// Distance to the pretrained parameters after each step.
    pub distance: Vec<f64>,
    pub final_network: LruNetwork,
    pub updates: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub steps: usize,
    pub updates: usize,
    pub frozen_total: f64,
    pub tuned_total: f64,
    pub frozen_mean: f64,
    pub tuned_mean: f64,
    /// `tuned_total / frozen_total`.
    pub loss_ratio: f64,
    pub final_distance: f64,
}

impl RunMetrics {
    pub fn final_distance(&self) -> f64 {
        self.distance.last().copied().unwrap_or(0.0)
    }

    pub fn summary(&self) -> RunSummary {
        RunSummary {
            steps: self.timestamps.len(),
            updates: self.updates,
            frozen_total: self.frozen.total(),
            tuned_total: self.tuned.total(),
            frozen_mean: self.frozen.mean(),
            tuned_mean: self.tuned.mean(),
            loss_ratio: self.tuned.total() / self.frozen.total(),
            final_distance: self.final_distance(),
        }
    }
}

/// Rejects a stream that was not produced by the checkpoint's pipeline.
pub fn check_stream(ckpt: &Checkpoint, stream: &SequenceData) -> Result<()> {
    let pipe = &ckpt.pipeline;
    if stream.feature_names != pipe.feature_names() || stream.target_names != pipe.target_names() {
        return Err(Error::Compatibility(format!(
            "stream has {} features / {} targets, checkpoint pipeline has {} / {}",
            stream.feature_names.len(),
            stream.target_names.len(),
            pipe.feature_dim(),
            pipe.target_dim()
        )));
    }
    if stream.features.ncols() != ckpt.network.input_dim()
        || stream.targets.ncols() != ckpt.network.output_dim()
    {
        return Err(Error::Compatibility(format!(
            "network expects {} inputs / {} outputs, stream has {} / {}",
            ckpt.network.input_dim(),
            ckpt.network.output_dim(),
            stream.features.ncols(),
            stream.targets.ncols()
        )));
    }
    Ok(())
}

/// Online fine-tuning over `stream` with a frozen baseline alongside.
/// Hidden states and traces restart at every session boundary.
pub fn cmd_finetune(ckpt: &Checkpoint, stream: &SequenceData, cfg: &FinetuneConfig) -> Result<RunMetrics> {
    check_stream(ckpt, stream)?;
    let mut learner = OnlineLearner::new(&ckpt.network, cfg, ckpt.optimizer.as_ref())?;
    let steps = stream.len();
    let outputs = stream.targets.ncols();
    let mut frozen = RunTrace::new(steps, outputs);
    let mut tuned = RunTrace::new(steps, outputs);
    let mut distance = Vec::with_capacity(steps);
    let mut u = vec![0.0; stream.features.ncols()];
    let mut y = vec![0.0; outputs];
    for span in &stream.sessions {
        learner.reset_sequence();
        for row in span.start..span.start + span.len {
            u.iter_mut()
                .zip(stream.features.row(row))
                .for_each(|(d, s)| *d = *s);
            y.iter_mut()
                .zip(stream.targets.row(row))
                .for_each(|(d, s)| *d = *s);
            let out = learner.step(&u, &y)?;
            frozen.push(row, learner.frozen_prediction(), out.frozen_loss);
            tuned.push(row, learner.tuned_prediction(), out.tuned_loss);
            distance.push(out.distance);
        }
    }
    Ok(RunMetrics {
        timestamps: stream.timestamps.clone(),
        target_names: stream.target_names.clone(),
        targets: stream.targets.clone(),
        frozen,
        tuned,
        distance,
        final_network: learner.network().clone(),
        updates: learner.updates(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationKind {
    Lambda,
    Freeze,
    Baseline,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub kind: AblationKind,
    pub lambda_reg: Option<f64>,
    pub freeze_after: Option<usize>,
    pub total_loss: f64,
    pub mean_loss: f64,
    pub final_distance: f64,
}

fn ablation_row(kind: AblationKind, cfg: &FinetuneConfig, m: &RunMetrics) -> AblationRow {
    AblationRow {
        kind,
        lambda_reg: Some(cfg.lambda_reg),
        freeze_after: cfg.freeze_after,
        total_loss: m.tuned.total(),
        mean_loss: m.tuned.mean(),
        final_distance: m.final_distance(),
    }
}

/// Full-horizon runs over [`LAMBDA_GRID`], then [`FREEZE_GRID`] runs with
/// the best strength and with no anchor, then the frozen baseline.
pub fn cmd_ablate(ckpt: &Checkpoint, stream: &SequenceData, base: &FinetuneConfig) -> Result<Vec<AblationRow>> {
    let lambda_cfgs: Vec<FinetuneConfig> = LAMBDA_GRID
        .iter()
        .map(|&lambda_reg| FinetuneConfig {
            lambda_reg,
            freeze_after: None,
            ..base.clone()
        })
        .collect();
    let lambda_runs = lambda_cfgs
        .par_iter()
        .map(|cfg| cmd_finetune(ckpt, stream, cfg))
        .collect::<Result<Vec<_>>>()?;
    let best = lambda_runs
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.tuned.total().total_cmp(&b.1.tuned.total()))
        .map(|(i, _)| LAMBDA_GRID[i])
        .expect("non-empty grid");
    let freeze_cfgs: Vec<FinetuneConfig> = [best, 0.0]
        .iter()
        .flat_map(|&lambda_reg| {
            FREEZE_GRID.iter().map(move |&n| FinetuneConfig {
                lambda_reg,
                freeze_after: Some(n),
                ..base.clone()
            })
        })
        .collect();
    let freeze_runs = freeze_cfgs
        .par_iter()
        .map(|cfg| cmd_finetune(ckpt, stream, cfg))
        .collect::<Result<Vec<_>>>()?;

    let mut rows: Vec<AblationRow> = lambda_cfgs
        .iter()
        .zip(&lambda_runs)
        .map(|(c, m)| ablation_row(AblationKind::Lambda, c, m))
        .collect();
    rows.extend(
        freeze_cfgs
            .iter()
            .zip(&freeze_runs)
            .map(|(c, m)| ablation_row(AblationKind::Freeze, c, m)),
    );
    let baseline = &lambda_runs[0].frozen;
    rows.push(AblationRow {
        kind: AblationKind::Baseline,
        lambda_reg: None,
        freeze_after: None,
        total_loss: baseline.total(),
        mean_loss: baseline.mean(),
        final_distance: 0.0,
    });
    Ok(rows)
}

fn num(x: f64) -> String {
    format!("{x:.16e}")
}

/// One row per stream step: losses, cumulative losses, distance, and for
/// every target the truth and both predictions.
pub fn write_run_metrics_csv(path: &Path, m: &RunMetrics) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    write!(
        out,
        "step,timestamp,frozen_loss,tuned_loss,frozen_cumulative,tuned_cumulative,distance"
    )?;
    for name in &m.target_names {
        write!(out, ",{name}_true,{name}_frozen,{name}_tuned")?;
    }
    writeln!(out)?;
    for t in 0..m.timestamps.len() {
        write!(
            out,
            "{t},{},{},{},{},{},{}",
            m.timestamps[t],
            num(m.frozen.losses[t]),
            num(m.tuned.losses[t]),
            num(m.frozen.cumulative[t]),
            num(m.tuned.cumulative[t]),
            num(m.distance[t])
        )?;
        for k in 0..m.target_names.len() {
            write!(
                out,
                ",{},{},{}",
                num(m.targets[[t, k]]),
                num(m.frozen.predictions[[t, k]]),
                num(m.tuned.predictions[[t, k]])
            )?;
        }
        writeln!(out)?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_ablation_csv(path: &Path, rows: &[AblationRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["kind", "lambda_reg", "freeze_after", "total_loss", "mean_loss", "final_distance"])?;
    for r in rows {
        let kind = match r.kind {
            AblationKind::Lambda => "lambda",
            AblationKind::Freeze => "freeze",
            AblationKind::Baseline => "baseline",
        };
        w.write_record([
            kind.to_string(),
            r.lambda_reg.map(|v| v.to_string()).unwrap_or_default(),
            r.freeze_after.map(|v| v.to_string()).unwrap_or_default(),
            num(r.total_loss),
            num(r.mean_loss),
            num(r.final_distance),
        ])?;
    }
    w.flush()?;
    Ok(())
}
