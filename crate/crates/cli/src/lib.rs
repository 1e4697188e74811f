//! File formats, synthetic data generation, and reporting for the
//! activation-sparsity toolkit.
//!
//! Two binary containers are defined here and are normative byte-for-byte:
//!
//! * `FFW1` — one FFN layer's weights (or one activation predictor),
//!   little-endian f32 matrices behind an 18-byte header;
//! * `NAT1` — per-token, per-layer records: f32 neuron output magnitudes,
//!   bitmask activation sets, or f32 FFN inputs, behind a 25-byte header.
//!
//! Everything else is JSON: threshold tables, mask sidecars, and the
//! per-command reports printed by the `tailcut` binary.

pub mod commands;
pub mod digest;
pub mod error;
pub mod format;
pub mod report;
pub mod synth;

pub use error::CliError;
