//! Entropy-guided pruning (EGP) for ReLU networks.
//!
//! The crate trains small dense/convolutional ReLU networks, measures how often
//! every neuron sits in its ON (`z > 0`) or OFF (`z <= 0`) region, and uses the
//! resulting binary entropies to steer iterative magnitude pruning toward layers
//! that are close to becoming linear. Layers whose entropy reaches zero are then
//! removed structurally: dead neurons are dropped and always-ON dense layers are
//! folded into their successor.
//!
//! Module map:
//!
//! * [`nn`]: tensors, layers, forward/backward passes, momentum SGD, checkpoints.
//! * [`entropy`]: ON/OFF state statistics and per-neuron / per-layer entropy.
//! * [`prune`]: budget computation, relevance-weighted allocation and the
//!   iterative pruning loop.
//! * [`reduce`]: structural edits (drop, fuse, linearize) with equivalence checks.
//! * [`data`]: IDX loading, seeded blob datasets, batching.
//! * [`config`], [`experiment`], [`report`]: the experiment pipeline behind the CLI.

pub mod config;
pub mod data;
pub mod entropy;
pub mod error;
pub mod experiment;
pub mod nn;
pub mod prune;
pub mod reduce;
pub mod report;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Tensor;
