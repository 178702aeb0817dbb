use ndarray::{Array2, ArrayView2};
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use super::layer::{init_layer_with, DiagonalSystem, HiddenState, LruLayerParams};
use super::scan::scan_forward;
use crate::error::{ensure_len, Error, Result};

/// Shape and initialization ring of a stacked LRU network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub input_dim: usize,
    /// Hidden width of each layer, bottom to top, e.g. `[16]` or `[16, 16]`.
    pub widths: Vec<usize>,
    pub output_dim: usize,
    pub r_min: f64,
    pub r_max: f64,
}

impl NetworkConfig {
    pub fn new(input_dim: usize, widths: Vec<usize>, output_dim: usize) -> Self {
        Self {
            input_dim,
            widths,
            output_dim,
            r_min: 0.9,
            r_max: 0.999,
        }
    }
}

/// A linear stack of LRU layers. Layer `k` reads the output of layer `k-1`
/// within the same time step; intermediate layers emit as many channels as
/// they have nodes and the top layer's readout produces the prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LruNetwork {
    pub layers: Vec<LruLayerParams>,
}

impl LruNetwork {
    pub fn init(cfg: &NetworkConfig, seed: u64) -> Result<Self> {
        if cfg.widths.is_empty() {
            return Err(Error::Config("network needs at least one layer".into()));
        }
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let depth = cfg.widths.len();
        let mut layers = Vec::with_capacity(depth);
        let mut m = cfg.input_dim;
        for (k, &n) in cfg.widths.iter().enumerate() {
            let p = if k + 1 == depth { cfg.output_dim } else { n };
            layers.push(init_layer_with(&mut rng, m, n, p, cfg.r_min, cfg.r_max)?);
            m = p;
        }
        Ok(Self { layers })
    }

    pub fn from_layers(layers: Vec<LruLayerParams>) -> Result<Self> {
        let net = Self { layers };
        net.validate()?;
        Ok(net)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::Contract("network has no layers".into()));
        }
        for layer in &self.layers {
            layer.validate()?;
        }
        for (k, pair) in self.layers.windows(2).enumerate() {
            if pair[0].output_dim != pair[1].input_dim {
                return Err(Error::Contract(format!(
                    "layer {k} emits {} channels but layer {} reads {}",
                    pair[0].output_dim,
                    k + 1,
                    pair[1].input_dim
                )));
            }
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].output_dim
    }

    pub fn widths(&self) -> Vec<usize> {
        self.layers.iter().map(|l| l.state_dim).collect()
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn zero_states(&self) -> Vec<HiddenState> {
        self.layers
            .iter()
            .map(|l| HiddenState::zeros(l.state_dim))
            .collect()
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self.layers.iter().map(|l| l.zeros_like()).collect(),
        }
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.num_params()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|l| l.is_finite())
    }

    /// The parameter vector θ, concatenating every layer's blocks in order.
    pub fn flatten(&self) -> Vec<f64> {
        flatten_layers(&self.layers)
    }

    pub fn write_flat(&self, out: &mut [f64]) {
        write_flat_layers(&self.layers, out)
    }

    pub fn load_flat(&mut self, theta: &[f64]) -> Result<()> {
        ensure_len("parameter vector", theta.len(), self.num_params())?;
        let mut offset = 0;
        for layer in &mut self.layers {
            for block in layer.blocks_mut() {
                block.copy_from_slice(&theta[offset..offset + block.len()]);
                offset += block.len();
            }
        }
        Ok(())
    }

    /// Runs each session-free sequence `u_seq` (`T × m₀`) from zero state,
    /// layer by layer through the scan. Returns `T × p`.
    pub fn forward_sequence(&self, u_seq: ArrayView2<f64>) -> Result<Array2<f64>> {
        let mut input = None::<Array2<f64>>;
        for layer in &self.layers {
            let view = input.as_ref().map(|a| a.view()).unwrap_or(u_seq);
            let out = scan_forward(layer, &HiddenState::zeros(layer.state_dim), view)?;
            input = Some(out.outputs);
        }
        Ok(input.expect("at least one layer"))
    }
}

pub(crate) fn flatten_layers(layers: &[LruLayerParams]) -> Vec<f64> {
    let total = layers.iter().map(|l| l.num_params()).sum();
    let mut out = vec![0.0; total];
    write_flat_layers(layers, &mut out);
    out
}

pub(crate) fn write_flat_layers(layers: &[LruLayerParams], out: &mut [f64]) {
    let mut offset = 0;
    for layer in layers {
        for block in layer.blocks() {
            out[offset..offset + block.len()].copy_from_slice(block);
            offset += block.len();
        }
    }
    debug_assert_eq!(offset, out.len());
}

/// One time step through the whole stack. `states` is updated in place;
/// the returned vector is the prediction `ŷ_t`.
pub fn network_forward(
    net: &LruNetwork,
    states: &mut [HiddenState],
    u: &[f64],
) -> Result<Vec<f64>> {
    if states.len() != net.depth() {
        return Err(Error::Contract(format!(
            "network has {} layers but {} states were supplied",
            net.depth(),
            states.len()
        )));
    }
    ensure_len("network input", u.len(), net.input_dim())?;
    let mut input = u.to_vec();
    for (layer, state) in net.layers.iter().zip(states.iter_mut()) {
        ensure_len("hidden state", state.len(), layer.state_dim)?;
        let sys = DiagonalSystem::new(layer);
        let mut drive = vec![Default::default(); layer.state_dim];
        let mut y = vec![0.0; layer.output_dim];
        layer.step_in_place(&sys, &mut state.h, &input, &mut drive, &mut y);
        input = y;
    }
    Ok(input)
}

#[cfg(test)]
mod tests {
    use super::super::layer::layer_step;
    use super::*;
    use num_complex::Complex64;
    use rand::Rng;

    fn random_inputs(t: usize, m: usize, seed: u64) -> Array2<f64> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((t, m), |_| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn single_layer_matches_layer_step() {
        let net = LruNetwork::init(&NetworkConfig::new(3, vec![8], 2), 5).unwrap();
        let mut states = net.zero_states();
        let mut h = HiddenState::zeros(8);
        let u = random_inputs(10, 3, 1);
        for row in u.rows() {
            let row = row.to_vec();
            let y_net = network_forward(&net, &mut states, &row).unwrap();
            let (h_next, y) = layer_step(&net.layers[0], &h, &row).unwrap();
            h = h_next;
            assert_eq!(y_net, y);
            assert_eq!(states[0], h);
        }
    }

    #[test]
    fn transparent_second_layer() {
        let mut net = LruNetwork::init(&NetworkConfig::new(3, vec![4, 4], 4), 9).unwrap();
        let top = &mut net.layers[1];
        top.nu.iter_mut().for_each(|x| *x = 50.0);
        top.gamma_log.iter_mut().for_each(|x| *x = 0.0);
        top.b_re.iter_mut().for_each(|x| *x = 0.0);
        top.b_im.iter_mut().for_each(|x| *x = 0.0);
        top.c_re.iter_mut().for_each(|x| *x = 0.0);
        top.c_im.iter_mut().for_each(|x| *x = 0.0);
        top.d.iter_mut().for_each(|x| *x = 0.0);
        for j in 0..4 {
            top.b_re[j * 4 + j] = 1.0;
            top.c_re[j * 4 + j] = 1.0;
        }
        let mut states = net.zero_states();
        let mut h = HiddenState::zeros(4);
        for row in random_inputs(12, 3, 2).rows() {
            let row = row.to_vec();
            let y = network_forward(&net, &mut states, &row).unwrap();
            let (h_next, y_first) = layer_step(&net.layers[0], &h, &row).unwrap();
            h = h_next;
            for (a, b) in y.iter().zip(&y_first) {
                assert!((a - b).abs() < 1e-15);
            }
        }
    }

    /// Unrolled oracle for a depth-2 stack: every state written out as an
    /// explicit sum over past inputs.
    #[test]
    fn depth_two_matches_unrolled_evaluation() {
        let net = LruNetwork::init(&NetworkConfig::new(3, vec![5, 4], 2), 17).unwrap();
        let t_len = 16;
        let u = random_inputs(t_len, 3, 3);
        let mut states = net.zero_states();
        let stepped: Vec<Vec<f64>> = u
            .rows()
            .into_iter()
            .map(|r| network_forward(&net, &mut states, &r.to_vec()).unwrap())
            .collect();

        let lambda = |l: &LruLayerParams| super::super::layer::derive_lambda(l);
        let unrolled_layer = |l: &LruLayerParams, inputs: &[Vec<f64>]| -> Vec<Vec<f64>> {
            let lam = lambda(l);
            let (m, n, p) = (l.input_dim, l.state_dim, l.output_dim);
            (0..inputs.len())
                .map(|t| {
                    let h: Vec<Complex64> = (0..n)
                        .map(|j| {
                            let gamma = l.gamma_log[j].exp();
                            (0..=t)
                                .map(|k| {
                                    let bu: Complex64 = (0..m)
                                        .map(|i| {
                                            Complex64::new(l.b_re[j * m + i], l.b_im[j * m + i])
                                                * inputs[k][i]
                                        })
                                        .sum();
                                    lam[j].powi((t - k) as i32) * gamma * bu
                                })
                                .sum()
                        })
                        .collect();
                    (0..p)
                        .map(|q| {
                            let ch: f64 = (0..n)
                                .map(|j| (Complex64::new(l.c_re[q * n + j], l.c_im[q * n + j]) * h[j]).re)
                                .sum();
                            let du: f64 = (0..m).map(|i| l.d[q * m + i] * inputs[t][i]).sum();
                            ch + du
                        })
                        .collect()
                })
                .collect()
        };
        let inputs: Vec<Vec<f64>> = u.rows().into_iter().map(|r| r.to_vec()).collect();
        let mid = unrolled_layer(&net.layers[0], &inputs);
        let top = unrolled_layer(&net.layers[1], &mid);
        for (a, b) in stepped.iter().flatten().zip(top.iter().flatten()) {
            assert!((a - b).abs() < 1e-12 * (1.0 + b.abs()), "{a} vs {b}");
        }

        let seq = net.forward_sequence(u.view()).unwrap();
        for (a, b) in seq.iter().zip(stepped.iter().flatten()) {
            assert!((a - b).abs() < 1e-12 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn state_count_mismatch_rejected() {
        let net = LruNetwork::init(&NetworkConfig::new(2, vec![3, 3], 1), 0).unwrap();
        let mut states = vec![HiddenState::zeros(3)];
        assert!(matches!(
            network_forward(&net, &mut states, &[0.0, 0.0]),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn flat_round_trip() {
        let net = LruNetwork::init(&NetworkConfig::new(4, vec![6, 5], 3), 1).unwrap();
        let theta = net.flatten();
        assert_eq!(theta.len(), net.num_params());
        let mut other = net.zeros_like();
        other.load_flat(&theta).unwrap();
        assert_eq!(other, net);
        assert!(other.load_flat(&theta[1..]).is_err());
    }

    #[test]
    fn chained_widths() {
        let net = LruNetwork::init(&NetworkConfig::new(20, vec![16, 16], 5), 1).unwrap();
        assert_eq!(net.layers[0].input_dim, 20);
        assert_eq!(net.layers[0].output_dim, 16);
        assert_eq!(net.layers[1].input_dim, 16);
        assert_eq!(net.output_dim(), 5);
        net.validate().unwrap();
    }
}
