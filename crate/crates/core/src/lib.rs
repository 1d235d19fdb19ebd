//! Spiking neural networks with learnable, congestion-aware axonal delays.
//!
//! * [`spike`]: discrete LIF dynamics and surrogate derivatives
//! * [`delay`]: base delays, congestion-driven shift, interpolated reads
//! * [`network`]: feedforward layers, forward pass, BPTT
//! * [`trainer`]: Adam, learning-rate schedules, training loop
//! * [`data`]: event files, binning, synthetic coincidence task
//! * [`diagnostics`]: input congestion, overflow and trace exports
//! * [`gradcheck`]: finite-difference suites
//! * [`config`]: flat `section.key = value` run configuration
//! * [`experiment`]: data preparation, training runs, delay-mode ablation

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod data;
pub mod delay;
pub mod diagnostics;
pub mod error;
pub mod experiment;
pub mod gradcheck;
pub mod network;
pub mod seed;
pub mod spike;
pub mod trainer;

pub use error::{CadadError, Result};
