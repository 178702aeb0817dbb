//! Loss, optimizer and regularizer pieces shared by offline training and
//! online fine-tuning. Everything here works on flat parameter vectors.

use serde::{Deserialize, Serialize};

use crate::error::{ensure_len, Error, Result};
use crate::float17;

/// Huber loss with threshold `delta`: quadratic near zero, linear in the tails.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Huber {
    delta: f64,
}

impl Default for Huber {
    fn default() -> Self {
        Self { delta: 1.0 }
    }
}

impl Huber {
    pub fn new(delta: f64) -> Result<Self> {
        if !(delta > 0.0 && delta.is_finite()) {
            return Err(Error::Config(format!("Huber delta must be positive, got {delta}")));
        }
        Ok(Self { delta })
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn value(&self, r: f64) -> f64 {
        let a = r.abs();
        if a <= self.delta {
            0.5 * r * r
        } else {
            self.delta * (a - 0.5 * self.delta)
        }
    }

    pub fn derivative(&self, r: f64) -> f64 {
        r.clamp(-self.delta, self.delta)
    }

    /// Mean Huber loss over the output channels of one time step.
    pub fn step_loss(&self, prediction: &[f64], target: &[f64]) -> f64 {
        let sum: f64 = prediction
            .iter()
            .zip(target)
            .map(|(p, y)| self.value(p - y))
            .sum();
        sum / prediction.len() as f64
    }

    /// Writes `scale · ∂ step_loss / ∂ prediction` into `out`.
    pub fn step_gradient(&self, prediction: &[f64], target: &[f64], scale: f64, out: &mut [f64]) {
        let s = scale / prediction.len() as f64;
        for ((o, p), y) in out.iter_mut().zip(prediction).zip(target) {
            *o = s * self.derivative(p - y);
        }
    }
}

/// Scalar Huber loss; errors on a non-positive threshold.
pub fn huber(residual: f64, delta: f64) -> Result<f64> {
    Ok(Huber::new(delta)?.value(residual))
}

pub fn global_norm(grads: &[f64]) -> f64 {
    grads.iter().map(|g| g * g).sum::<f64>().sqrt()
}

/// Rescales `grads` so their global L2 norm is at most `max_norm`
/// (`None` disables clipping). Returns the norm before clipping.
///
/// Norms within a relative `1e-12` of the limit count as already clipped,
/// which makes the operation idempotent bit for bit.
pub fn clip_global_norm(grads: &mut [f64], max_norm: Option<f64>) -> f64 {
    let norm = global_norm(grads);
    if let Some(limit) = max_norm {
        if norm > limit * (1.0 + 1e-12) {
            let scale = limit / norm;
            grads.iter_mut().for_each(|g| *g *= scale);
        }
    }
    norm
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            ..Self::default()
        }
    }
}

/// Bias-corrected Adam moments for a flat parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub config: AdamConfig,
    pub t: u64,
    #[serde(with = "float17::vec")]
    pub m: Vec<f64>,
    #[serde(with = "float17::vec")]
    pub v: Vec<f64>,
}

impl AdamState {
    pub fn new(len: usize, config: AdamConfig) -> Self {
        Self {
            config,
            t: 0,
            m: vec![0.0; len],
            v: vec![0.0; len],
        }
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    /// `θ ← θ − η · m̂ / (√v̂ + ε)`.
    pub fn step(&mut self, theta: &mut [f64], grads: &[f64]) -> Result<()> {
        ensure_len("parameters", theta.len(), self.m.len())?;
        ensure_len("gradients", grads.len(), self.m.len())?;
        if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
            return Err(Error::Training {
                batch: self.t as usize,
                message: format!("non-finite gradient at parameter {i}"),
            });
        }
        self.t += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let bias1 = 1.0 - beta1.powi(self.t as i32);
        let bias2 = 1.0 - beta2.powi(self.t as i32);
        for (((p, g), m), v) in theta
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut())
            .zip(self.v.iter_mut())
        {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let m_hat = *m / bias1;
            let v_hat = *v / bias2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        Ok(())
    }
}

/// Functional form of [`AdamState::step`].
pub fn adam_step(theta: &[f64], grads: &[f64], state: &AdamState) -> Result<(Vec<f64>, AdamState)> {
    let mut theta = theta.to_vec();
    let mut state = state.clone();
    state.step(&mut theta, grads)?;
    Ok((theta, state))
}

/// Pull toward the pretrained parameters during fine-tuning.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorConfig {
    pub theta_pre: Vec<f64>,
    pub lambda_reg: f64,
    /// Use `λ/2 · ‖θ − θ_pre‖²` instead of the unsquared norm. Not the
    /// default; the unsquared penalty gives a constant-magnitude pull.
    pub squared: bool,
}

impl AnchorConfig {
    pub fn new(theta_pre: Vec<f64>, lambda_reg: f64) -> Result<Self> {
        if !(lambda_reg >= 0.0 && lambda_reg.is_finite()) {
            return Err(Error::Config(format!(
                "regularization strength must be a finite value >= 0, got {lambda_reg}"
            )));
        }
        Ok(Self {
            theta_pre,
            lambda_reg,
            squared: false,
        })
    }

    pub fn distance(&self, theta: &[f64]) -> f64 {
        theta
            .iter()
            .zip(&self.theta_pre)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    pub fn penalty(&self, theta: &[f64]) -> f64 {
        let dist = self.distance(theta);
        if self.squared {
            0.5 * self.lambda_reg * dist * dist
        } else {
            self.lambda_reg * dist
        }
    }

    /// Adds the penalty gradient into `grads`. For the unsquared norm this
    /// is `λ (θ − θ_pre) / ‖θ − θ_pre‖`, taken as zero at `θ = θ_pre`.
    pub fn add_gradient(&self, theta: &[f64], grads: &mut [f64]) -> Result<()> {
        ensure_len("anchor", self.theta_pre.len(), theta.len())?;
        ensure_len("gradients", grads.len(), theta.len())?;
        if self.lambda_reg == 0.0 {
            return Ok(());
        }
        let scale = if self.squared {
            self.lambda_reg
        } else {
            let dist = self.distance(theta);
            if dist == 0.0 {
                return Ok(());
            }
            self.lambda_reg / dist
        };
        for ((g, a), b) in grads.iter_mut().zip(theta).zip(&self.theta_pre) {
            *g += scale * (a - b);
        }
        Ok(())
    }
}

pub fn anchor_gradient(theta: &[f64], anchor: &AnchorConfig) -> Result<Vec<f64>> {
    let mut grads = vec![0.0; theta.len()];
    anchor.add_gradient(theta, &mut grads)?;
    Ok(grads)
}
