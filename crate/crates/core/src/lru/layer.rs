use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_len, Error, Result};
use crate::float17;

/// Smallest admissible decay rate `exp(nu)`. Below it the eigenvalue
/// magnitude `exp(-exp(nu))` would round to exactly 1.0 in `f64`, so the
/// rate saturates here (with zero derivative) and `|λ| ≤ exp(-1e-12)`.
pub(crate) const MIN_DECAY_RATE: f64 = 1e-12;

/// Parameters of one LRU layer: a diagonal complex recurrence of width `n`
/// driven by `m` real inputs and read out into `p` real outputs.
///
/// Matrices are stored row-major: `b_re[j * m + i]` is `B[j, i]`,
/// `c_re[k * n + j]` is `C[k, j]`, `d[k * m + i]` is `D[k, i]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LruLayerParams {
    pub input_dim: usize,
    pub state_dim: usize,
    pub output_dim: usize,
    /// Log of the decay rate; `|λ_j| = exp(-exp(nu_j))`.
    #[serde(with = "float17::vec")]
    pub nu: Vec<f64>,
    /// Log of the eigenvalue phase; `arg λ_j = exp(theta_phase_j)`.
    #[serde(with = "float17::vec")]
    pub theta_phase: Vec<f64>,
    /// Log of the input normalization `γ_j`.
    #[serde(with = "float17::vec")]
    pub gamma_log: Vec<f64>,
    #[serde(with = "float17::vec")]
    pub b_re: Vec<f64>,
    #[serde(with = "float17::vec")]
    pub b_im: Vec<f64>,
    #[serde(with = "float17::vec")]
    pub c_re: Vec<f64>,
    #[serde(with = "float17::vec")]
    pub c_im: Vec<f64>,
    #[serde(with = "float17::vec")]
    pub d: Vec<f64>,
}

/// Names of the parameter blocks, in flattening order.
pub const BLOCK_NAMES: [&str; 8] = [
    "nu",
    "theta_phase",
    "gamma_log",
    "b_re",
    "b_im",
    "c_re",
    "c_im",
    "d",
];

/// Recurrence of the hidden state `h_t` (one complex value per node).
#[derive(Debug, Clone, PartialEq)]
pub struct HiddenState {
    pub h: Vec<Complex64>,
}

impl HiddenState {
    pub fn zeros(n: usize) -> Self {
        Self {
            h: vec![Complex64::new(0.0, 0.0); n],
        }
    }

    pub fn len(&self) -> usize {
        self.h.len()
    }

    pub fn is_empty(&self) -> bool {
        self.h.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.h.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }
}

/// The discretized diagonal system derived from a layer's parameters,
/// together with the derivatives RTRL and BPTT need.
#[derive(Debug, Clone)]
pub struct DiagonalSystem {
    pub lambda: Vec<Complex64>,
    pub gamma: Vec<f64>,
    pub d_lambda_d_nu: Vec<Complex64>,
    pub d_lambda_d_phase: Vec<Complex64>,
}

impl DiagonalSystem {
    pub fn new(params: &LruLayerParams) -> Self {
        let n = params.state_dim;
        let mut sys = Self {
            lambda: Vec::with_capacity(n),
            gamma: Vec::with_capacity(n),
            d_lambda_d_nu: Vec::with_capacity(n),
            d_lambda_d_phase: Vec::with_capacity(n),
        };
        for j in 0..n {
            let (lambda, d_nu, d_phase) = eigenvalue(params.nu[j], params.theta_phase[j]);
            sys.lambda.push(lambda);
            sys.gamma.push(params.gamma_log[j].exp());
            sys.d_lambda_d_nu.push(d_nu);
            sys.d_lambda_d_phase.push(d_phase);
        }
        sys
    }

    /// Recomputes in place; used by the online learner after every update.
    pub fn refresh(&mut self, params: &LruLayerParams) {
        for j in 0..params.state_dim {
            let (lambda, d_nu, d_phase) = eigenvalue(params.nu[j], params.theta_phase[j]);
            self.lambda[j] = lambda;
            self.gamma[j] = params.gamma_log[j].exp();
            self.d_lambda_d_nu[j] = d_nu;
            self.d_lambda_d_phase[j] = d_phase;
        }
    }
}

/// `λ = exp(-exp(nu)) · e^{i·exp(theta_phase)}` and its partial derivatives.
fn eigenvalue(nu: f64, theta_phase: f64) -> (Complex64, Complex64, Complex64) {
    let raw_rate = nu.exp();
    let (rate, d_rate) = if raw_rate < MIN_DECAY_RATE {
        (MIN_DECAY_RATE, 0.0)
    } else {
        (raw_rate, raw_rate)
    };
    let magnitude = (-rate).exp();
    let phase = theta_phase.exp();
    let lambda = Complex64::from_polar(magnitude, phase);
    let d_nu = lambda * (-d_rate);
    let d_phase = lambda * Complex64::new(0.0, phase);
    (lambda, d_nu, d_phase)
}

/// Complex eigenvalues `λ_j` of the layer's diagonal recurrence.
pub fn derive_lambda(params: &LruLayerParams) -> Vec<Complex64> {
    params
        .nu
        .iter()
        .zip(&params.theta_phase)
        .map(|(&nu, &phase)| eigenvalue(nu, phase).0)
        .collect()
}

/// `|λ_j|` computed directly from the polar form.
pub fn eigen_magnitudes(params: &LruLayerParams) -> Vec<f64> {
    params
        .nu
        .iter()
        .map(|&nu| (-nu.exp().max(MIN_DECAY_RATE)).exp())
        .collect()
}

impl LruLayerParams {
    /// All-zero parameters of the given shape (also used as a gradient buffer).
    pub fn zeros(m: usize, n: usize, p: usize) -> Self {
        Self {
            input_dim: m,
            state_dim: n,
            output_dim: p,
            nu: vec![0.0; n],
            theta_phase: vec![0.0; n],
            gamma_log: vec![0.0; n],
            b_re: vec![0.0; n * m],
            b_im: vec![0.0; n * m],
            c_re: vec![0.0; p * n],
            c_im: vec![0.0; p * n],
            d: vec![0.0; p * m],
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.input_dim, self.state_dim, self.output_dim)
    }

    pub fn validate(&self) -> Result<()> {
        let (m, n, p) = (self.input_dim, self.state_dim, self.output_dim);
        if m == 0 || n == 0 || p == 0 {
            return Err(Error::Contract(format!(
                "layer dimensions must be positive, got m={m} n={n} p={p}"
            )));
        }
        ensure_len("nu", self.nu.len(), n)?;
        ensure_len("theta_phase", self.theta_phase.len(), n)?;
        ensure_len("gamma_log", self.gamma_log.len(), n)?;
        ensure_len("b_re", self.b_re.len(), n * m)?;
        ensure_len("b_im", self.b_im.len(), n * m)?;
        ensure_len("c_re", self.c_re.len(), p * n)?;
        ensure_len("c_im", self.c_im.len(), p * n)?;
        ensure_len("d", self.d.len(), p * m)?;
        Ok(())
    }

    pub fn blocks(&self) -> [&[f64]; 8] {
        [
            &self.nu,
            &self.theta_phase,
            &self.gamma_log,
            &self.b_re,
            &self.b_im,
            &self.c_re,
            &self.c_im,
            &self.d,
        ]
    }

    pub fn blocks_mut(&mut self) -> [&mut [f64]; 8] {
        [
            &mut self.nu,
            &mut self.theta_phase,
            &mut self.gamma_log,
            &mut self.b_re,
            &mut self.b_im,
            &mut self.c_re,
            &mut self.c_im,
            &mut self.d,
        ]
    }

    pub fn num_params(&self) -> usize {
        self.blocks().iter().map(|b| b.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.blocks().iter().all(|b| b.iter().all(|x| x.is_finite()))
    }

    /// Writes `γ ⊙ (B u)` into `out`.
    pub(crate) fn drive_into(&self, gamma: &[f64], u: &[f64], out: &mut [Complex64]) {
        let m = self.input_dim;
        for (j, slot) in out.iter_mut().enumerate() {
            let row_re = &self.b_re[j * m..(j + 1) * m];
            let row_im = &self.b_im[j * m..(j + 1) * m];
            let mut re = 0.0;
            let mut im = 0.0;
            for i in 0..m {
                re += row_re[i] * u[i];
                im += row_im[i] * u[i];
            }
            *slot = Complex64::new(gamma[j] * re, gamma[j] * im);
        }
    }

    /// Writes `Re[C h] + D u` into `y`.
    pub(crate) fn readout_into(&self, h: &[Complex64], u: &[f64], y: &mut [f64]) {
        let (m, n) = (self.input_dim, self.state_dim);
        for (k, out) in y.iter_mut().enumerate() {
            let c_re = &self.c_re[k * n..(k + 1) * n];
            let c_im = &self.c_im[k * n..(k + 1) * n];
            let d = &self.d[k * m..(k + 1) * m];
            let mut acc = 0.0;
            for j in 0..n {
                acc += c_re[j] * h[j].re - c_im[j] * h[j].im;
            }
            for i in 0..m {
                acc += d[i] * u[i];
            }
            *out = acc;
        }
    }

    /// Advances `h` in place by one step and writes the output into `y`.
    pub(crate) fn step_in_place(
        &self,
        sys: &DiagonalSystem,
        h: &mut [Complex64],
        u: &[f64],
        drive: &mut [Complex64],
        y: &mut [f64],
    ) {
        self.drive_into(&sys.gamma, u, drive);
        for j in 0..self.state_dim {
            h[j] = sys.lambda[j] * h[j] + drive[j];
        }
        self.readout_into(h, u, y);
    }
}

/// One recurrence step: `h_t = λ ⊙ h_{t-1} + γ ⊙ (B u_t)`,
/// `y_t = Re[C h_t] + D u_t`.
pub fn layer_step(
    params: &LruLayerParams,
    h_prev: &HiddenState,
    u: &[f64],
) -> Result<(HiddenState, Vec<f64>)> {
    ensure_len("hidden state", h_prev.len(), params.state_dim)?;
    ensure_len("layer input", u.len(), params.input_dim)?;
    let sys = DiagonalSystem::new(params);
    let mut h = h_prev.h.clone();
    let mut drive = vec![Complex64::new(0.0, 0.0); params.state_dim];
    let mut y = vec![0.0; params.output_dim];
    params.step_in_place(&sys, &mut h, u, &mut drive, &mut y);
    Ok((HiddenState { h }, y))
}

/// Ring-initialized layer: `|λ|` uniform on the annulus `[r_min, r_max]`,
/// phase uniform on `[0, π/10]`, `γ = sqrt(1 - |λ|²)`, Gaussian `B` and `C`
/// scaled by `1/√m` and `1/√n`, `D = 0`.
pub fn init_layer(
    m: usize,
    n: usize,
    p: usize,
    r_min: f64,
    r_max: f64,
    seed: u64,
) -> Result<LruLayerParams> {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    init_layer_with(&mut rng, m, n, p, r_min, r_max)
}

pub(crate) fn check_ring(r_min: f64, r_max: f64) -> Result<()> {
    if !(r_min > 0.0 && r_min <= r_max && r_max < 1.0) {
        return Err(Error::Config(format!(
            "eigenvalue ring must satisfy 0 < r_min <= r_max < 1, got [{r_min}, {r_max}]"
        )));
    }
    Ok(())
}

pub(crate) fn init_layer_with<R: Rng + ?Sized>(
    rng: &mut R,
    m: usize,
    n: usize,
    p: usize,
    r_min: f64,
    r_max: f64,
) -> Result<LruLayerParams> {
    check_ring(r_min, r_max)?;
    if m == 0 || n == 0 || p == 0 {
        return Err(Error::Config(format!(
            "layer dimensions must be positive, got m={m} n={n} p={p}"
        )));
    }
    let max_phase = std::f64::consts::PI / 10.0;
    let mut layer = LruLayerParams::zeros(m, n, p);
    for j in 0..n {
        let u: f64 = rng.random();
        let mag_sq = u * (r_max * r_max - r_min * r_min) + r_min * r_min;
        // |λ|² = exp(-2 exp(nu))
        layer.nu[j] = (-0.5 * mag_sq.ln()).ln();
        // (0, 1] so the log stays finite
        let v: f64 = 1.0 - rng.random::<f64>();
        layer.theta_phase[j] = (v * max_phase).ln();
        layer.gamma_log[j] = 0.5 * (1.0 - mag_sq).ln();
    }
    let b_scale = 1.0 / (m as f64).sqrt();
    for x in layer.b_re.iter_mut().chain(layer.b_im.iter_mut()) {
        *x = rng.sample::<f64, _>(StandardNormal) * b_scale;
    }
    let c_scale = 1.0 / (n as f64).sqrt();
    for x in layer.c_re.iter_mut().chain(layer.c_im.iter_mut()) {
        *x = rng.sample::<f64, _>(StandardNormal) * c_scale;
    }
    Ok(layer)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    /// A layer with the given eigenvalues encoded through (nu, theta_phase).
    /// Only real positive λ in (0,1) are representable exactly this way.
    fn identity_layer(n: usize) -> LruLayerParams {
        let mut p = LruLayerParams::zeros(n, n, n);
        for j in 0..n {
            p.nu[j] = 50.0; // |λ| = exp(-e^50) == 0
            p.b_re[j * n + j] = 1.0;
            p.c_re[j * n + j] = 1.0;
        }
        p
    }

    #[test]
    fn lambda_at_log_pi_phase() {
        let mut p = LruLayerParams::zeros(1, 1, 1);
        p.theta_phase[0] = PI.ln();
        let lambda = derive_lambda(&p)[0];
        assert!((lambda.re + (-1.0f64).exp()).abs() < 1e-15);
        assert!(lambda.im.abs() < 1e-15);
    }

    #[test]
    fn lambda_vanishes_for_large_nu() {
        let mut p = LruLayerParams::zeros(1, 3, 1);
        p.nu = vec![5.0, 10.0, 800.0];
        let mags: Vec<f64> = derive_lambda(&p).iter().map(|z| z.norm()).collect();
        assert!(mags[0] < 1e-60);
        assert_eq!(mags[1], 0.0);
        assert_eq!(mags[2], 0.0);
    }

    #[test]
    fn lambda_magnitude_stays_below_one_for_very_negative_nu() {
        let mut p = LruLayerParams::zeros(1, 4, 1);
        p.nu = vec![-30.0, -40.0, -700.0, -1e6];
        for z in derive_lambda(&p) {
            assert!(z.norm() < 1.0);
        }
        for r in eigen_magnitudes(&p) {
            assert!(r < 1.0);
        }
    }

    #[test]
    fn degenerate_ring_gives_exact_magnitude() {
        let layer = init_layer(3, 8, 2, 0.5, 0.5, 7).unwrap();
        for r in eigen_magnitudes(&layer) {
            assert!((r - 0.5).abs() < 1e-15, "{r}");
        }
    }

    #[test]
    fn init_is_deterministic() {
        let a = init_layer(4, 16, 5, 0.9, 0.999, 42).unwrap();
        let b = init_layer(4, 16, 5, 0.9, 0.999, 42).unwrap();
        for (x, y) in a.blocks().iter().zip(b.blocks().iter()) {
            assert!(x.iter().zip(y.iter()).all(|(p, q)| p.to_bits() == q.to_bits()));
        }
        let c = init_layer(4, 16, 5, 0.9, 0.999, 43).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn default_ring_gamma_bounds() {
        // γ = sqrt(1 - r²) on r ∈ [0.9, 0.999]
        let lo = (1.0f64 - 0.999 * 0.999).sqrt();
        let hi = (1.0f64 - 0.81).sqrt();
        assert!((lo - 0.0447).abs() < 1e-4 && (hi - 0.436).abs() < 1e-3);
        let layer = init_layer(4, 256, 2, 0.9, 0.999, 1).unwrap();
        let mags = eigen_magnitudes(&layer);
        for (g, r) in layer.gamma_log.iter().zip(mags) {
            let gamma = g.exp();
            assert!(gamma >= lo - 1e-12 && gamma <= hi + 1e-12);
            assert!((0.9 - 1e-12..=0.999 + 1e-12).contains(&r));
            assert!((gamma - (1.0 - r * r).sqrt()).abs() < 1e-12);
        }
        for phase in &layer.theta_phase {
            let ph = phase.exp();
            assert!(ph > 0.0 && ph <= PI / 10.0 + 1e-15);
        }
        assert!(layer.d.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn invalid_ring_rejected() {
        for (lo, hi) in [(0.0, 0.5), (0.6, 0.5), (0.5, 1.0), (-0.1, 0.9)] {
            assert!(matches!(
                init_layer(2, 2, 2, lo, hi, 0),
                Err(Error::Config(_))
            ));
        }
    }

    #[test]
    fn memoryless_identity_step() {
        let layer = identity_layer(3);
        let (h, y) = layer_step(&layer, &HiddenState::zeros(3), &[1.0, 0.0, 0.0]).unwrap();
        assert_eq!(h.h, vec![c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0)]);
        assert_eq!(y, vec![1.0, 0.0, 0.0]);
    }

    #[test]
    fn pure_decay_step() {
        let mut layer = LruLayerParams::zeros(1, 1, 1);
        layer.nu[0] = (2.0f64.ln()).ln(); // |λ| = 1/2
        layer.theta_phase[0] = -800.0; // phase exp(-800) == 0
        let h_prev = HiddenState { h: vec![c(2.0, 0.0)] };
        let (h, _) = layer_step(&layer, &h_prev, &[0.0]).unwrap();
        assert!((h.h[0] - c(1.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn step_matches_convolution_sum() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let layer = init_layer_with(&mut rng, 3, 5, 2, 0.5, 0.95).unwrap();
        let inputs: Vec<Vec<f64>> = (0..8)
            .map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let mut h = HiddenState::zeros(5);
        for u in &inputs {
            h = layer_step(&layer, &h, u).unwrap().0;
        }
        // h_8 = Σ_k λ^{8-k} γ (B u_k), evaluated term by term
        let lambda = derive_lambda(&layer);
        for j in 0..5 {
            let gamma = layer.gamma_log[j].exp();
            let mut expected = c(0.0, 0.0);
            for (k, u) in inputs.iter().enumerate() {
                let mut bu = c(0.0, 0.0);
                for i in 0..3 {
                    bu += c(layer.b_re[j * 3 + i], layer.b_im[j * 3 + i]) * u[i];
                }
                expected += lambda[j].powi((7 - k) as i32) * gamma * bu;
            }
            assert!((h.h[j] - expected).norm() < 1e-13 * (1.0 + expected.norm()));
        }
    }

    #[test]
    fn dimension_mismatch_is_contract_error() {
        let layer = LruLayerParams::zeros(2, 3, 1);
        assert!(matches!(
            layer_step(&layer, &HiddenState::zeros(3), &[1.0]),
            Err(Error::Contract(_))
        ));
        assert!(matches!(
            layer_step(&layer, &HiddenState::zeros(2), &[1.0, 2.0]),
            Err(Error::Contract(_))
        ));
    }
}
