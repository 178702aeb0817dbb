//! Real-time recurrent learning for diagonal LRU layers.
//!
//! Because `∂h_t/∂h_{t-1} = diag(λ)`, the total derivative of node `j`
//! with respect to any parameter that only touches node `j` obeys a scalar
//! recurrence. One complex trace per parameter entry is enough, so the
//! memory is `Θ(n·m + n)` per layer and every update is an elementwise
//! multiply-add.
//!
//! Stacks of layers use local traces plus instantaneous credit assignment
//! across layers within the time step. That is exact for one layer and an
//! approximation for deeper stacks (lower layers miss the temporal paths
//! through the layers above them).

use num_complex::Complex64;

use crate::error::{ensure_len, Error, Result};
use crate::lru::{
    flatten_layers, write_flat_layers, DiagonalSystem, HiddenState, LruLayerParams, LruNetwork,
};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Traces `dh_{t,j}/dθ` for one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerTrace {
    pub input_dim: usize,
    pub state_dim: usize,
    pub nu: Vec<Complex64>,
    pub phase: Vec<Complex64>,
    pub gamma: Vec<Complex64>,
    /// `dh_j / dB_re[j, i]`, row-major `n × m`. The trace for `B_im[j, i]`
    /// is exactly `i` times this entry (see [`LayerTrace::b_im`]).
    pub b: Vec<Complex64>,
}

impl LayerTrace {
    pub fn zeros(params: &LruLayerParams) -> Self {
        let (m, n) = (params.input_dim, params.state_dim);
        Self {
            input_dim: m,
            state_dim: n,
            nu: vec![ZERO; n],
            phase: vec![ZERO; n],
            gamma: vec![ZERO; n],
            b: vec![ZERO; n * m],
        }
    }

    pub fn b_re(&self, j: usize, i: usize) -> Complex64 {
        self.b[j * self.input_dim + i]
    }

    pub fn b_im(&self, j: usize, i: usize) -> Complex64 {
        Complex64::i() * self.b[j * self.input_dim + i]
    }

    /// Number of complex entries held; `3n + n·m`.
    pub fn len(&self) -> usize {
        self.nu.len() + self.phase.len() + self.gamma.len() + self.b.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn clear(&mut self) {
        for v in [&mut self.nu, &mut self.phase, &mut self.gamma, &mut self.b] {
            v.iter_mut().for_each(|z| *z = ZERO);
        }
    }

    fn check(&self, params: &LruLayerParams) -> Result<()> {
        if self.input_dim != params.input_dim || self.state_dim != params.state_dim {
            return Err(Error::Contract(format!(
                "trace shaped {}x{} does not match layer {}x{}",
                self.state_dim, self.input_dim, params.state_dim, params.input_dim
            )));
        }
        Ok(())
    }

    /// `J_t = diag(λ) J_{t-1} + ∂h_t/∂θ`, with `drive = γ ⊙ (B u_t)`.
    fn advance(&mut self, sys: &DiagonalSystem, h_prev: &[Complex64], u: &[f64], drive: &[Complex64]) {
        let m = self.input_dim;
        for j in 0..self.state_dim {
            let lambda = sys.lambda[j];
            self.nu[j] = lambda * self.nu[j] + sys.d_lambda_d_nu[j] * h_prev[j];
            self.phase[j] = lambda * self.phase[j] + sys.d_lambda_d_phase[j] * h_prev[j];
            self.gamma[j] = lambda * self.gamma[j] + drive[j];
            let gamma = sys.gamma[j];
            for (slot, &ui) in self.b[j * m..(j + 1) * m].iter_mut().zip(u) {
                *slot = lambda * *slot + gamma * ui;
            }
        }
    }
}

/// Traces for every layer of a network.
#[derive(Debug, Clone, PartialEq)]
pub struct EligibilityTrace {
    pub layers: Vec<LayerTrace>,
}

impl EligibilityTrace {
    /// Total complex entries across layers.
    pub fn len(&self) -> usize {
        self.layers.iter().map(|l| l.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Zero traces shaped for `net`.
pub fn reset_trace(net: &LruNetwork) -> EligibilityTrace {
    EligibilityTrace {
        layers: net.layers.iter().map(LayerTrace::zeros).collect(),
    }
}

/// One trace update for a single layer, given the state before the step.
pub fn trace_step(
    params: &LruLayerParams,
    h_prev: &HiddenState,
    u: &[f64],
    trace_prev: &LayerTrace,
) -> Result<LayerTrace> {
    trace_prev.check(params)?;
    ensure_len("hidden state", h_prev.len(), params.state_dim)?;
    ensure_len("layer input", u.len(), params.input_dim)?;
    let sys = DiagonalSystem::new(params);
    let mut drive = vec![ZERO; params.state_dim];
    params.drive_into(&sys.gamma, u, &mut drive);
    let mut next = trace_prev.clone();
    next.advance(&sys, &h_prev.h, u, &drive);
    Ok(next)
}

/// Gradient of a scalar loss with respect to every parameter block, shaped
/// like the network.
#[derive(Debug, Clone, PartialEq)]
pub struct StepGradient {
    pub layers: Vec<LruLayerParams>,
}

impl StepGradient {
    pub fn zeros_like(net: &LruNetwork) -> Self {
        Self {
            layers: net.layers.iter().map(|l| l.zeros_like()).collect(),
        }
    }

    pub fn clear(&mut self) {
        for layer in &mut self.layers {
            for block in layer.blocks_mut() {
                block.iter_mut().for_each(|x| *x = 0.0);
            }
        }
    }

    pub fn flatten(&self) -> Vec<f64> {
        flatten_layers(&self.layers)
    }

    pub fn write_flat(&self, out: &mut [f64]) {
        write_flat_layers(&self.layers, out)
    }

    pub fn add_scaled(&mut self, other: &StepGradient, scale: f64) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            for (x, y) in a.blocks_mut().into_iter().zip(b.blocks()) {
                x.iter_mut().zip(y).for_each(|(x, y)| *x += scale * y);
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|l| l.is_finite())
    }
}

/// Per-step gradient `J_t · ∇_ŷ L_t`, assembled top-down through the stack.
///
/// `states` are the hidden states after the step, `u` the network input of
/// the step; inputs of the upper layers are recomputed from them.
pub fn online_gradient(
    net: &LruNetwork,
    traces: &EligibilityTrace,
    states: &[HiddenState],
    u: &[f64],
    dl_dy: &[f64],
) -> Result<StepGradient> {
    if traces.layers.len() != net.depth() {
        return Err(Error::Contract(format!(
            "network has {} layers but traces cover {}",
            net.depth(),
            traces.layers.len()
        )));
    }
    if states.len() != net.depth() {
        return Err(Error::Contract(format!(
            "network has {} layers but {} states were supplied",
            net.depth(),
            states.len()
        )));
    }
    ensure_len("network input", u.len(), net.input_dim())?;
    ensure_len("output gradient", dl_dy.len(), net.output_dim())?;
    let mut inputs = Vec::with_capacity(net.depth());
    let mut current = u.to_vec();
    for ((layer, trace), state) in net.layers.iter().zip(&traces.layers).zip(states) {
        trace.check(layer)?;
        ensure_len("hidden state", state.len(), layer.state_dim)?;
        let mut y = vec![0.0; layer.output_dim];
        layer.readout_into(&state.h, &current, &mut y);
        inputs.push(std::mem::replace(&mut current, y));
    }
    let systems: Vec<DiagonalSystem> = net.layers.iter().map(DiagonalSystem::new).collect();
    let mut grad = StepGradient::zeros_like(net);
    accumulate_gradient(net, &systems, traces, states, &inputs, dl_dy, &mut grad);
    Ok(grad)
}

fn accumulate_gradient(
    net: &LruNetwork,
    systems: &[DiagonalSystem],
    traces: &EligibilityTrace,
    states: &[HiddenState],
    inputs: &[Vec<f64>],
    dl_dy: &[f64],
    grad: &mut StepGradient,
) {
    let mut delta = dl_dy.to_vec();
    for l in (0..net.depth()).rev() {
        let layer = &net.layers[l];
        let trace = &traces.layers[l];
        let sys = &systems[l];
        let g = &mut grad.layers[l];
        let h = &states[l].h;
        let u = &inputs[l];
        let (m, n) = (layer.input_dim, layer.state_dim);

        // e_j = Σ_k δ_k C_kj, so that dL = Re(Σ_j e_j dh_j)
        let mut e = vec![ZERO; n];
        for (k, &dk) in delta.iter().enumerate() {
            if dk == 0.0 {
                continue;
            }
            for j in 0..n {
                e[j] += Complex64::new(layer.c_re[k * n + j], layer.c_im[k * n + j]) * dk;
                g.c_re[k * n + j] += dk * h[j].re;
                g.c_im[k * n + j] -= dk * h[j].im;
            }
            for i in 0..m {
                g.d[k * m + i] += dk * u[i];
            }
        }
        for j in 0..n {
            let ej = e[j];
            g.nu[j] += (ej * trace.nu[j]).re;
            g.theta_phase[j] += (ej * trace.phase[j]).re;
            g.gamma_log[j] += (ej * trace.gamma[j]).re;
            for i in 0..m {
                let z = ej * trace.b[j * m + i];
                g.b_re[j * m + i] += z.re;
                g.b_im[j * m + i] -= z.im;
            }
        }
        if l == 0 {
            break;
        }
        // instantaneous map of this layer's input onto its output
        let mut below = vec![0.0; m];
        for (k, &dk) in delta.iter().enumerate() {
            for i in 0..m {
                below[i] += layer.d[k * m + i] * dk;
            }
        }
        for j in 0..n {
            let eg = e[j] * sys.gamma[j];
            for i in 0..m {
                below[i] += eg.re * layer.b_re[j * m + i] - eg.im * layer.b_im[j * m + i];
            }
        }
        delta = below;
    }
}

/// Carries hidden states and eligibility traces through a stream, one
/// step at a time, for online learning.
#[derive(Debug, Clone)]
pub struct RtrlStepper {
    systems: Vec<DiagonalSystem>,
    states: Vec<HiddenState>,
    traces: EligibilityTrace,
    /// Input seen by each layer at the current step.
    inputs: Vec<Vec<f64>>,
    drive: Vec<Vec<Complex64>>,
    prediction: Vec<f64>,
}

impl RtrlStepper {
    pub fn new(net: &LruNetwork) -> Self {
        let mut inputs = Vec::with_capacity(net.depth());
        for layer in &net.layers {
            inputs.push(vec![0.0; layer.input_dim]);
        }
        Self {
            systems: net.layers.iter().map(DiagonalSystem::new).collect(),
            states: net.zero_states(),
            traces: reset_trace(net),
            inputs,
            drive: net
                .layers
                .iter()
                .map(|l| vec![ZERO; l.state_dim])
                .collect(),
            prediction: vec![0.0; net.output_dim()],
        }
    }

    /// Zero hidden states and traces (start of a new sequence).
    pub fn reset(&mut self) {
        self.reset_states();
        self.reset_traces();
    }

    pub fn reset_states(&mut self) {
        for s in &mut self.states {
            s.h.iter_mut().for_each(|z| *z = ZERO);
        }
    }

    pub fn reset_traces(&mut self) {
        for t in &mut self.traces.layers {
            t.clear();
        }
    }

    pub fn states(&self) -> &[HiddenState] {
        &self.states
    }

    pub fn traces(&self) -> &EligibilityTrace {
        &self.traces
    }

    pub fn prediction(&self) -> &[f64] {
        &self.prediction
    }

    /// Advances states and traces by one input and returns `ŷ_t`.
    pub fn advance(&mut self, net: &LruNetwork, u: &[f64]) -> Result<&[f64]> {
        self.step(net, u, true)
    }

    /// Advances the hidden states only; traces are left untouched.
    pub fn advance_frozen(&mut self, net: &LruNetwork, u: &[f64]) -> Result<&[f64]> {
        self.step(net, u, false)
    }

    fn step(&mut self, net: &LruNetwork, u: &[f64], with_traces: bool) -> Result<&[f64]> {
        if net.depth() != self.states.len() {
            return Err(Error::Contract("stepper was built for a different network".into()));
        }
        ensure_len("network input", u.len(), net.input_dim())?;
        self.inputs[0].copy_from_slice(u);
        let depth = net.depth();
        for l in 0..depth {
            let layer = &net.layers[l];
            let sys = &mut self.systems[l];
            sys.refresh(layer);
            let drive = &mut self.drive[l];
            layer.drive_into(&sys.gamma, &self.inputs[l], drive);
            if with_traces {
                self.traces.layers[l].advance(sys, &self.states[l].h, &self.inputs[l], drive);
            }
            let h = &mut self.states[l].h;
            for j in 0..layer.state_dim {
                h[j] = sys.lambda[j] * h[j] + drive[j];
            }
            let (lower, upper) = self.inputs.split_at_mut(l + 1);
            let out = if l + 1 < depth {
                &mut upper[0]
            } else {
                &mut self.prediction
            };
            layer.readout_into(h, &lower[l], out);
        }
        Ok(&self.prediction)
    }

    /// Adds `J_t · dl_dy` for the current step into `grad`. The network must
    /// be the one the last [`advance`](Self::advance) ran with.
    pub fn accumulate_gradient(
        &self,
        net: &LruNetwork,
        dl_dy: &[f64],
        grad: &mut StepGradient,
    ) -> Result<()> {
        ensure_len("output gradient", dl_dy.len(), net.output_dim())?;
        if grad.layers.len() != net.depth() {
            return Err(Error::Contract("gradient buffer has the wrong depth".into()));
        }
        accumulate_gradient(
            net,
            &self.systems,
            &self.traces,
            &self.states,
            &self.inputs,
            dl_dy,
            grad,
        );
        Ok(())
    }
}
