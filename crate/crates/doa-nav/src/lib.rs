//! Directed object-attention navigation on a synthetic gridworld.
//!
//! The crate is organised as a stack:
//!
//! - [`autodiff`] — dense f64 tensors with a reverse-mode tape, covering
//!   exactly the operations the policy network needs.
//! - [`sim`] — a deterministic gridworld object-navigation environment with
//!   visibility-driven detection confidence (the engineered attention-bias
//!   condition).
//! - [`model`] — the attention-graph policy network: intrinsic + view-adaptive
//!   object graphs, object/image cross-attention, branch fusion, LSTM
//!   actor-critic head, plus an object-GCN baseline and ablation toggles.
//! - [`trainer`] — synchronous (deterministic) or asynchronous advantage
//!   actor-critic training with parallel workers, Adam, and checkpointing.
//! - [`metrics`] — SR/SPL/SAE, attention-distribution bias diagnostics, and a
//!   k-nearest-neighbor entropy estimator.
//! - [`harness`] — experiment configs, presets, and the CLI command
//!   implementations (`train`, `eval`, `ablate`, `diagnose`).

pub mod autodiff;
pub mod harness;
pub mod metrics;
pub mod model;
pub mod rng;
pub mod sim;
pub mod trainer;
