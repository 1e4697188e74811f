//! Neuron-level activation sparsity toolkit: FFN decomposition, output-magnitude
//! thresholds, CETT calibration, activation prediction, and hardware-affinity
//! analytics.
//!
//! A transformer feed-forward network can be read as a sum of per-neuron
//! contributions. This crate decomposes FFNs (gated and two-layer variants)
//! neuron by neuron, measures how much of the output is carried by low-magnitude
//! "tail" neurons, calibrates per-layer magnitude thresholds against a relative
//! truncation-error budget, trains a small network that predicts which neurons
//! will fire, and computes token/neuron locality statistics (reuse ratio,
//! co-activation, hot-neuron CDF) together with a sliding-window parameter-I/O
//! cache simulation.
//!
//! The crate is `no_std` (with `alloc`); file formats and the CLI live in the
//! companion `tailcut` crate. All operations are deterministic: summation
//! orders are fixed, and every randomized procedure takes an explicit seed.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod affinity;
pub mod error;
pub mod ffn;
pub mod predictor;
pub mod real;
pub mod rng;
pub mod sparsity;
pub mod tensor;
mod util;

pub use error::{CoreError, Result};
pub use real::Real;
pub use rng::DetRng;
pub use tensor::{Matrix, Vector};
