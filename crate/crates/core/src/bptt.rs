//! Offline training: window sampling, exact reverse-mode gradients through
//! the unrolled recurrence, and the Adam training loop (which can also run
//! the RTRL trainer for from-scratch comparisons).

use ndarray::{s, Array2, Array3, ArrayView2, Axis};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datapipe::{SequenceData, SessionSpan};
use crate::error::{Error, Result};
use crate::lru::{scan_forward, DiagonalSystem, HiddenState, LruNetwork};
use crate::optim::{clip_global_norm, AdamConfig, AdamState, Huber};
use crate::rtrl::{RtrlStepper, StepGradient};

/// A batch of fixed-length windows, each inside a single session.
#[derive(Debug, Clone)]
pub struct WindowBatch {
    /// `batch × T × m`
    pub inputs: Array3<f64>,
    /// `batch × T × p`
    pub targets: Array3<f64>,
    pub window: usize,
    pub sessions: Vec<u32>,
    /// Row offset of each window within its session.
    pub starts: Vec<usize>,
}

impl WindowBatch {
    pub fn len(&self) -> usize {
        self.sessions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sessions.is_empty()
    }
}

/// Draws window start positions uniformly over every admissible window of
/// every session, so sessions are hit in proportion to `len - T + 1`.
#[derive(Debug, Clone)]
pub struct WindowSampler {
    spans: Vec<SessionSpan>,
    /// Cumulative window counts; `cumulative[k]` counts windows in sessions `..=k`.
    cumulative: Vec<usize>,
    window: usize,
}

impl WindowSampler {
    pub fn new(spans: &[SessionSpan], window: usize) -> Result<Self> {
        if window == 0 {
            return Err(Error::Config("window length must be positive".into()));
        }
        if spans.is_empty() {
            return Err(Error::Config("no sessions to sample windows from".into()));
        }
        if let Some(short) = spans.iter().find(|s| s.len < window) {
            return Err(Error::Config(format!(
                "window length {window} exceeds session {} which has {} rows",
                short.id, short.len
            )));
        }
        let mut total = 0;
        let cumulative = spans
            .iter()
            .map(|s| {
                total += s.len - window + 1;
                total
            })
            .collect();
        Ok(Self {
            spans: spans.to_vec(),
            cumulative,
            window,
        })
    }

    pub fn total_windows(&self) -> usize {
        *self.cumulative.last().unwrap()
    }

    /// Returns `(index into spans, offset within the session)`.
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> (usize, usize) {
        let k = rng.random_range(0..self.total_windows());
        let session = self.cumulative.partition_point(|&c| c <= k);
        let before = if session == 0 { 0 } else { self.cumulative[session - 1] };
        (session, k - before)
    }

    pub fn sample<R: Rng + ?Sized>(
        &self,
        data: &SequenceData,
        batch: usize,
        rng: &mut R,
    ) -> WindowBatch {
        let (m, p, t) = (data.features.ncols(), data.targets.ncols(), self.window);
        let mut inputs = Array3::zeros((batch, t, m));
        let mut targets = Array3::zeros((batch, t, p));
        let mut sessions = Vec::with_capacity(batch);
        let mut starts = Vec::with_capacity(batch);
        for b in 0..batch {
            let (k, offset) = self.draw(rng);
            let span = &self.spans[k];
            let row = span.start + offset;
            inputs
                .index_axis_mut(Axis(0), b)
                .assign(&data.features.slice(s![row..row + t, ..]));
            targets
                .index_axis_mut(Axis(0), b)
                .assign(&data.targets.slice(s![row..row + t, ..]));
            sessions.push(span.id);
            starts.push(offset);
        }
        WindowBatch {
            inputs,
            targets,
            window: t,
            sessions,
            starts,
        }
    }
}

/// `batch` windows of length `window` drawn uniformly from `data`'s sessions.
pub fn sample_windows(
    data: &SequenceData,
    window: usize,
    batch: usize,
    seed: u64,
) -> Result<WindowBatch> {
    let sampler = WindowSampler::new(&data.sessions, window)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(sampler.sample(data, batch, &mut rng))
}

/// Everything the backward pass needs from a forward pass over one window.
struct WindowTape {
    /// Input of each layer, `T × m_l`.
    inputs: Vec<Array2<f64>>,
    /// States of each layer, `T × n_l`.
    states: Vec<Array2<Complex64>>,
    prediction: Array2<f64>,
}

fn forward_tape(net: &LruNetwork, u: ArrayView2<f64>) -> Result<WindowTape> {
    let mut inputs = Vec::with_capacity(net.depth());
    let mut states = Vec::with_capacity(net.depth());
    let mut current = u.to_owned();
    for layer in &net.layers {
        let out = scan_forward(layer, &HiddenState::zeros(layer.state_dim), current.view())?;
        inputs.push(current);
        states.push(out.states);
        current = out.outputs;
    }
    Ok(WindowTape {
        inputs,
        states,
        prediction: current,
    })
}

/// Reverse pass through the unrolled stack. `dl_dy` is `T × p`.
fn backward_tape(net: &LruNetwork, tape: &WindowTape, dl_dy: Array2<f64>) -> StepGradient {
    let mut grad = StepGradient::zeros_like(net);
    let mut delta = dl_dy;
    for l in (0..net.depth()).rev() {
        let layer = &net.layers[l];
        let g = &mut grad.layers[l];
        let sys = DiagonalSystem::new(layer);
        let (m, n, p) = (layer.input_dim, layer.state_dim, layer.output_dim);
        let t_len = delta.nrows();
        let inputs = &tape.inputs[l];
        let states = &tape.states[l];
        let mut d_input = Array2::<f64>::zeros((t_len, m));
        let zero = Complex64::new(0.0, 0.0);
        // adjoint a_t with dL = Re(Σ_j a_tj dh_tj); a_t = e_t + λ ⊙ a_{t+1}
        let mut adjoint = vec![zero; n];
        let mut bu = vec![zero; n];
        let ones = vec![1.0; n];
        for t in (0..t_len).rev() {
            let d = delta.row(t);
            let h = states.row(t);
            let u = inputs.row(t);
            for j in 0..n {
                let mut e = zero;
                for k in 0..p {
                    e += Complex64::new(layer.c_re[k * n + j], layer.c_im[k * n + j]) * d[k];
                }
                adjoint[j] = e + sys.lambda[j] * adjoint[j];
            }
            for k in 0..p {
                let dk = d[k];
                for j in 0..n {
                    g.c_re[k * n + j] += dk * h[j].re;
                    g.c_im[k * n + j] -= dk * h[j].im;
                }
                for i in 0..m {
                    g.d[k * m + i] += dk * u[i];
                }
            }
            let u_slice = u.to_vec();
            layer.drive_into(&ones, &u_slice, &mut bu);
            let mut du = d_input.row_mut(t);
            for k in 0..p {
                for i in 0..m {
                    du[i] += layer.d[k * m + i] * d[k];
                }
            }
            for j in 0..n {
                let a = adjoint[j];
                if t > 0 {
                    let h_prev = states[[t - 1, j]];
                    g.nu[j] += (a * sys.d_lambda_d_nu[j] * h_prev).re;
                    g.theta_phase[j] += (a * sys.d_lambda_d_phase[j] * h_prev).re;
                }
                let ag = a * sys.gamma[j];
                g.gamma_log[j] += (ag * bu[j]).re;
                for i in 0..m {
                    g.b_re[j * m + i] += ag.re * u[i];
                    g.b_im[j * m + i] -= ag.im * u[i];
                    du[i] += ag.re * layer.b_re[j * m + i] - ag.im * layer.b_im[j * m + i];
                }
            }
        }
        delta = d_input;
    }
    grad
}

/// Sum over time of the per-step Huber loss for one sequence starting from
/// zero state, and its exact gradient scaled by `scale`.
pub fn sequence_gradient(
    net: &LruNetwork,
    inputs: ArrayView2<f64>,
    targets: ArrayView2<f64>,
    huber: &Huber,
    scale: f64,
) -> Result<(f64, StepGradient)> {
    let tape = forward_tape(net, inputs)?;
    let mut dl_dy = Array2::zeros(tape.prediction.raw_dim());
    let mut loss = 0.0;
    for t in 0..targets.nrows() {
        let pred = tape.prediction.row(t).to_vec();
        let target = targets.row(t).to_vec();
        loss += huber.step_loss(&pred, &target);
        let mut g = vec![0.0; pred.len()];
        huber.step_gradient(&pred, &target, scale, &mut g);
        dl_dy.row_mut(t).assign(&ndarray::Array1::from(g));
    }
    Ok((loss, backward_tape(net, &tape, dl_dy)))
}

/// Mean per-step Huber loss over the batch and its gradient. Windows are
/// processed in parallel and reduced in batch order, so the result does not
/// depend on thread scheduling.
pub fn bptt_gradient(
    net: &LruNetwork,
    batch: &WindowBatch,
    huber: &Huber,
) -> Result<(f64, StepGradient)> {
    if batch.is_empty() || batch.window == 0 {
        return Err(Error::Contract("empty window batch".into()));
    }
    let count = (batch.len() * batch.window) as f64;
    let scale = 1.0 / count;
    let per_window: Vec<Result<(f64, StepGradient)>> = (0..batch.len())
        .into_par_iter()
        .map(|b| {
            let (loss, grad) = sequence_gradient(
                net,
                batch.inputs.index_axis(Axis(0), b),
                batch.targets.index_axis(Axis(0), b),
                huber,
                scale,
            )?;
            if !loss.is_finite() {
                return Err(Error::Training {
                    batch: b,
                    message: format!("non-finite loss {loss}"),
                });
            }
            Ok((loss, grad))
        })
        .collect();
    let mut total = StepGradient::zeros_like(net);
    let mut loss = 0.0;
    for item in per_window {
        let (l, g) = item?;
        loss += l;
        total.add_scaled(&g, 1.0);
    }
    Ok((loss / count, total))
}

/// Sum and mean of the per-step Huber loss of a frozen network over every
/// session of `data`, each session starting from zero state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossSummary {
    pub total: f64,
    pub mean: f64,
    pub steps: usize,
}

pub fn predict(net: &LruNetwork, data: &SequenceData) -> Result<Array2<f64>> {
    let mut out = Array2::zeros((data.len(), net.output_dim()));
    for span in &data.sessions {
        let rows = span.start..span.start + span.len;
        let pred = net.forward_sequence(data.features.slice(s![rows.clone(), ..]))?;
        out.slice_mut(s![rows, ..]).assign(&pred);
    }
    Ok(out)
}

pub fn evaluate_loss(net: &LruNetwork, data: &SequenceData, huber: &Huber) -> Result<LossSummary> {
    let pred = predict(net, data)?;
    let mut total = 0.0;
    for (p, y) in pred.rows().into_iter().zip(data.targets.rows()) {
        total += huber.step_loss(&p.to_vec(), &y.to_vec());
    }
    let steps = data.len();
    Ok(LossSummary {
        total,
        mean: total / steps.max(1) as f64,
        steps,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Trainer {
    Bptt,
    Rtrl,
}

impl std::fmt::Display for Trainer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Trainer::Bptt => "bptt",
            Trainer::Rtrl => "rtrl",
        })
    }
}

impl std::str::FromStr for Trainer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bptt" => Ok(Trainer::Bptt),
            "rtrl" => Ok(Trainer::Rtrl),
            other => Err(Error::Config(format!("unknown trainer {other:?}"))),
        }
    }
}

/// When the RTRL trainer applies its accumulated gradient.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UpdateCadence {
    PerStep,
    PerWindow,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub trainer: Trainer,
    /// Optimizer steps for BPTT; sampled window batches for RTRL.
    pub steps: usize,
    pub batch: usize,
    pub window: usize,
    pub lr: f64,
    pub clip: Option<f64>,
    pub huber_delta: f64,
    pub eval_every: usize,
    pub seed: u64,
    pub rtrl_cadence: UpdateCadence,
    /// Zero the RTRL traces at the start of every window.
    pub reset_traces_per_window: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            trainer: Trainer::Bptt,
            steps: 100_000,
            batch: 256,
            window: 256,
            lr: 1e-3,
            clip: Some(0.5),
            huber_delta: 1.0,
            eval_every: 500,
            seed: 0,
            rtrl_cadence: UpdateCadence::PerStep,
            reset_traces_per_window: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub step: usize,
    pub train_loss: Option<f64>,
    pub val_loss: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Network with the lowest validation loss seen.
    pub network: LruNetwork,
    /// Optimizer state at the best step.
    pub optimizer: AdamState,
    pub best_val_loss: f64,
    pub best_step: usize,
    pub curve: Vec<LossRecord>,
    /// Step at which training stopped on a non-finite loss or gradient.
    pub diverged_at: Option<usize>,
}

/// Adam training loop. Records the training loss of every step and the
/// full-validation loss every `eval_every` steps (and at steps 0 and
/// `steps`), returning the best-validation network.
pub fn train(
    net: LruNetwork,
    train_data: &SequenceData,
    val_data: &SequenceData,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    let huber = Huber::new(cfg.huber_delta)?;
    if cfg.batch == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    if cfg.clip.is_some_and(|c| !(c > 0.0)) {
        return Err(Error::Config("clip norm must be positive".into()));
    }
    if train_data.features.ncols() != net.input_dim() || train_data.targets.ncols() != net.output_dim() {
        return Err(Error::Compatibility(format!(
            "data has {} features / {} targets, network expects {} / {}",
            train_data.features.ncols(),
            train_data.targets.ncols(),
            net.input_dim(),
            net.output_dim()
        )));
    }
    let sampler = WindowSampler::new(&train_data.sessions, cfg.window)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);

    let mut net = net;
    let mut theta = net.flatten();
    let mut flat_grad = vec![0.0; theta.len()];
    let mut adam = AdamState::new(theta.len(), AdamConfig::with_lr(cfg.lr));

    let initial = evaluate_loss(&net, val_data, &huber)?.mean;
    let mut curve = vec![LossRecord {
        step: 0,
        train_loss: None,
        val_loss: Some(initial),
    }];
    let mut best = (net.clone(), adam.clone(), initial, 0);
    let eval_every = cfg.eval_every.max(1);
    let mut diverged_at = None;

    let mut rtrl_steppers: Vec<RtrlStepper> = match cfg.trainer {
        Trainer::Rtrl => (0..cfg.batch).map(|_| RtrlStepper::new(&net)).collect(),
        Trainer::Bptt => Vec::new(),
    };

    for step in 1..=cfg.steps {
        let batch = sampler.sample(train_data, cfg.batch, &mut rng);
        let result = match cfg.trainer {
            Trainer::Bptt => bptt_gradient(&net, &batch, &huber).and_then(|(loss, grad)| {
                grad.write_flat(&mut flat_grad);
                clip_global_norm(&mut flat_grad, cfg.clip);
                adam.step(&mut theta, &flat_grad)?;
                net.load_flat(&theta)?;
                Ok(loss)
            }),
            Trainer::Rtrl => rtrl_window_step(
                &mut net,
                &mut theta,
                &mut adam,
                &mut rtrl_steppers,
                &batch,
                &huber,
                cfg,
            ),
        };
        let train_loss = match result {
            Ok(loss) if loss.is_finite() && net.is_finite() => loss,
            Ok(_) | Err(Error::Training { .. }) => {
                diverged_at = Some(step);
                log::warn!("training diverged at step {step}; keeping step {} checkpoint", best.3);
                break;
            }
            Err(e) => return Err(e),
        };
        let mut record = LossRecord {
            step,
            train_loss: Some(train_loss),
            val_loss: None,
        };
        if step % eval_every == 0 || step == cfg.steps {
            let val = evaluate_loss(&net, val_data, &huber)?.mean;
            if !val.is_finite() {
                curve.push(record);
                diverged_at = Some(step);
                break;
            }
            record.val_loss = Some(val);
            if val < best.2 {
                best = (net.clone(), adam.clone(), val, step);
            }
        }
        curve.push(record);
    }

    Ok(TrainOutcome {
        network: best.0,
        optimizer: best.1,
        best_val_loss: best.2,
        best_step: best.3,
        curve,
        diverged_at,
    })
}

/// One sampled batch through the RTRL trainer. Windows run in lockstep;
/// per-step cadence averages the batch's step gradients and updates after
/// every time step, per-window cadence updates once with the mean over the
/// whole batch.
fn rtrl_window_step(
    net: &mut LruNetwork,
    theta: &mut [f64],
    adam: &mut AdamState,
    steppers: &mut [RtrlStepper],
    batch: &WindowBatch,
    huber: &Huber,
    cfg: &TrainConfig,
) -> Result<f64> {
    let (b_len, t_len) = (batch.len(), batch.window);
    let per_step = cfg.rtrl_cadence == UpdateCadence::PerStep;
    let scale = if per_step {
        1.0 / b_len as f64
    } else {
        1.0 / (b_len * t_len) as f64
    };
    for stepper in steppers.iter_mut() {
        stepper.reset_states();
        if cfg.reset_traces_per_window {
            stepper.reset_traces();
        }
    }
    let mut grad = StepGradient::zeros_like(net);
    let mut flat = vec![0.0; theta.len()];
    let mut dl_dy = vec![0.0; net.output_dim()];
    let mut loss = 0.0;
    let mut apply = |net: &mut LruNetwork, grad: &mut StepGradient| -> Result<()> {
        grad.write_flat(&mut flat);
        clip_global_norm(&mut flat, cfg.clip);
        adam.step(theta, &flat)?;
        net.load_flat(theta)?;
        grad.clear();
        Ok(())
    };
    for t in 0..t_len {
        for (b, stepper) in steppers.iter_mut().enumerate() {
            let u = batch.inputs.slice(s![b, t, ..]).to_vec();
            let y = batch.targets.slice(s![b, t, ..]).to_vec();
            let pred = stepper.advance(net, &u)?;
            let step_loss = huber.step_loss(pred, &y);
            if !step_loss.is_finite() {
                return Err(Error::Training {
                    batch: b,
                    message: format!("non-finite loss at t={t}"),
                });
            }
            loss += step_loss;
            huber.step_gradient(pred, &y, scale, &mut dl_dy);
            stepper.accumulate_gradient(net, &dl_dy, &mut grad)?;
        }
        if per_step {
            apply(net, &mut grad)?;
        }
    }
    if !per_step {
        apply(net, &mut grad)?;
    }
    Ok(loss / (b_len * t_len) as f64)
}
