//! Linear Recurrent Unit (LRU) state-space models with two training paths:
//! offline backpropagation through time over fixed windows, and online
//! real-time recurrent learning (RTRL) that updates the parameters after
//! every observed label.
//!
//! The diagonal complex recurrence `h_t = λ ⊙ h_{t-1} + γ ⊙ (B u_t)` keeps
//! the RTRL eligibility traces at `Θ(n·m)` per layer, so a model can keep
//! adapting on an unbounded stream with constant memory.
//!
//! Modules:
//!
//! - [`lru`]: layer parameterization, single-step and scan forward passes, stacking.
//! - [`rtrl`]: eligibility traces and per-step online gradients.
//! - [`bptt`]: window sampling, reverse-mode gradients, the offline training loop.
//! - [`optim`]: Huber loss, Adam, global-norm clipping, the L2 anchor regularizer.
//! - [`datapipe`]: CSV ingestion, weather join, imputation, standardization, synthetic data.
//! - [`harness`]: pretraining, sweeps, online fine-tuning, ablations, checkpoints.

pub mod bptt;
pub mod datapipe;
mod error;
mod float17;
pub mod harness;
pub mod lru;
pub mod optim;
pub mod rtrl;

pub use error::{Error, Result};
pub use lru::{HiddenState, LruLayerParams, LruNetwork, NetworkConfig};
pub use num_complex::Complex64;
