//! The LRU layer: a discretized diagonal complex linear state-space model
//! with a stable exponential parameterization, plus scan-based sequence
//! evaluation and linear stacking.

mod layer;
mod network;
mod scan;

pub use layer::{
    derive_lambda, eigen_magnitudes, init_layer, layer_step, DiagonalSystem, HiddenState,
    LruLayerParams, BLOCK_NAMES,
};
pub use network::{network_forward, LruNetwork, NetworkConfig};
pub use scan::{
    linear_recurrence_scan, scan_forward, scan_forward_chunked, Affine, ScanOutput,
    MIN_CHUNK_LEN,
};

pub(crate) use network::{flatten_layers, write_flat_layers};
