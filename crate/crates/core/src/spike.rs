//! Discrete-time leaky integrate-and-fire dynamics.
//!
//! One step is
//!
//! ```text
//! v_pre[t] = leak * v[t-1] + I[t]
//! s[t]     = H(v_pre[t] - v_th)
//! v[t]     = v_pre[t] * (1 - s[t]) + v_reset * s[t]
//! ```
//!
//! The Heaviside `H` is replaced by a smooth surrogate on the backward pass.
//! For gradient checking, [`SpikeFn::Relaxed`] swaps `H` itself for the
//! primitive of the surrogate so that the forward map is differentiable and
//! the backward pass becomes the exact gradient.

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{CadadError, Result};

/// Smooth stand-in for the derivative of the Heaviside step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Surrogate {
    /// `slope / (2 (1 + slope |u|)^2)`
    #[default]
    FastSigmoid,
    /// `slope * sig(slope u) * (1 - sig(slope u))`
    Sigmoid,
}

impl Surrogate {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "fast_sigmoid" => Some(Surrogate::FastSigmoid),
            "sigmoid" => Some(Surrogate::Sigmoid),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Surrogate::FastSigmoid => "fast_sigmoid",
            Surrogate::Sigmoid => "sigmoid",
        }
    }

    pub fn derivative(&self, u: f64, slope: f64) -> f64 {
        match self {
            Surrogate::FastSigmoid => {
                let d = 1.0 + slope * u.abs();
                slope / (2.0 * d * d)
            }
            Surrogate::Sigmoid => {
                let s = logistic(slope * u);
                slope * s * (1.0 - s)
            }
        }
    }

    /// Antiderivative of [`Surrogate::derivative`], normalised to (0, 1).
    pub fn primitive(&self, u: f64, slope: f64) -> f64 {
        match self {
            Surrogate::FastSigmoid => 0.5 + 0.5 * slope * u / (1.0 + slope * u.abs()),
            Surrogate::Sigmoid => logistic(slope * u),
        }
    }
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// How the forward pass turns `v_pre - v_th` into a spike value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SpikeFn {
    /// Binary threshold crossing.
    #[default]
    Heaviside,
    /// Surrogate primitive; spikes become reals in (0, 1). Test use only.
    Relaxed,
}

/// LIF constants shared by a population.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NeuronConfig {
    /// Per-step membrane decay, strictly inside (0, 1).
    pub leak: f64,
    pub v_threshold: f64,
    pub v_reset: f64,
    pub surrogate_slope: f64,
    #[serde(default)]
    pub surrogate: Surrogate,
    /// Treat the reset gate as a constant on the backward pass.
    #[serde(default)]
    pub detach_reset: bool,
    #[serde(default)]
    pub spike_fn: SpikeFn,
}

impl Default for NeuronConfig {
    fn default() -> Self {
        // tau = 15 ms at dt = 10 ms
        NeuronConfig {
            leak: (-10.0f64 / 15.0).exp(),
            v_threshold: 1.0,
            v_reset: 0.0,
            surrogate_slope: 5.0,
            surrogate: Surrogate::FastSigmoid,
            detach_reset: false,
            spike_fn: SpikeFn::Heaviside,
        }
    }
}

impl NeuronConfig {
    /// Leak factor from a membrane time constant: `exp(-dt / tau)`.
    pub fn leak_from_tau(tau_ms: f64, dt_ms: f64) -> Result<f64> {
        if !(tau_ms > 0.0 && dt_ms > 0.0) {
            return Err(CadadError::Config(format!(
                "tau ({tau_ms}) and dt ({dt_ms}) must be positive"
            )));
        }
        Ok((-dt_ms / tau_ms).exp())
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.leak > 0.0 && self.leak < 1.0) {
            return Err(CadadError::Config(format!(
                "neuron.leak must lie in (0, 1), got {}",
                self.leak
            )));
        }
        if !(self.v_reset < self.v_threshold) {
            return Err(CadadError::Config(format!(
                "neuron.v_reset ({}) must be below neuron.v_threshold ({})",
                self.v_reset, self.v_threshold
            )));
        }
        if !(self.surrogate_slope > 0.0) {
            return Err(CadadError::Config(format!(
                "neuron.surrogate_slope must be positive, got {}",
                self.surrogate_slope
            )));
        }
        Ok(())
    }

    /// Spike value for a pre-reset potential.
    #[inline]
    pub fn fire(&self, v_pre: f64) -> f64 {
        let u = v_pre - self.v_threshold;
        match self.spike_fn {
            SpikeFn::Heaviside => {
                if u >= 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            SpikeFn::Relaxed => self.surrogate.primitive(u, self.surrogate_slope),
        }
    }

    #[inline]
    pub fn surrogate_grad(&self, v_pre: f64) -> f64 {
        self.surrogate
            .derivative(v_pre - self.v_threshold, self.surrogate_slope)
    }
}

/// Default-form surrogate derivative, `slope / (2 (1 + slope |u|)^2)`.
pub fn surrogate_derivative(u: f64, slope: f64) -> f64 {
    Surrogate::FastSigmoid.derivative(u, slope)
}

/// Membrane potentials of a population.
#[derive(Debug, Clone, PartialEq)]
pub struct MembraneState {
    pub v: Vec<f64>,
}

impl MembraneState {
    /// Quiescent population at `v_reset`.
    pub fn resting(n: usize, cfg: &NeuronConfig) -> Self {
        MembraneState {
            v: vec![cfg.v_reset; n],
        }
    }
}

/// Output of one LIF update.
#[derive(Debug, Clone, PartialEq)]
pub struct LifStep {
    pub next: MembraneState,
    pub spikes: Vec<f64>,
    pub v_pre: Vec<f64>,
}

pub fn lif_step(prev: &MembraneState, current: &[f64], cfg: &NeuronConfig) -> Result<LifStep> {
    if current.len() != prev.v.len() {
        return Err(CadadError::Contract(format!(
            "lif_step: {} currents for {} neurons",
            current.len(),
            prev.v.len()
        )));
    }
    let n = current.len();
    let mut v_pre = Vec::with_capacity(n);
    let mut spikes = Vec::with_capacity(n);
    let mut next = Vec::with_capacity(n);
    for (&v, &i) in prev.v.iter().zip(current) {
        let vp = cfg.leak * v + i;
        if !vp.is_finite() {
            return Err(CadadError::Numeric(format!(
                "non-finite membrane potential (v={v}, I={i})"
            )));
        }
        let s = cfg.fire(vp);
        v_pre.push(vp);
        spikes.push(s);
        next.push(vp * (1.0 - s) + cfg.v_reset * s);
    }
    Ok(LifStep {
        next: MembraneState { v: next },
        spikes,
        v_pre,
    })
}

/// Spike and pre-reset traces of a population over a whole sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct LifTrace {
    pub spikes: Array2<f64>,
    pub v_pre: Array2<f64>,
}

/// Runs the LIF recursion over `currents` (`[T x N]`) from a resting start.
pub fn run_lif_sequence(currents: ArrayView2<'_, f64>, cfg: &NeuronConfig) -> Result<LifTrace> {
    let (t_len, n) = currents.dim();
    let mut spikes = Array2::zeros((t_len, n));
    let mut v_pre = Array2::zeros((t_len, n));
    let mut v = vec![cfg.v_reset; n];
    for t in 0..t_len {
        for i in 0..n {
            let vp = cfg.leak * v[i] + currents[[t, i]];
            if !vp.is_finite() {
                return Err(CadadError::Numeric(format!(
                    "non-finite membrane potential at t={t}, neuron {i}"
                )));
            }
            let s = cfg.fire(vp);
            v_pre[[t, i]] = vp;
            spikes[[t, i]] = s;
            v[i] = vp * (1.0 - s) + cfg.v_reset * s;
        }
    }
    Ok(LifTrace { spikes, v_pre })
}

/// Membrane after reset, rebuilt from a trace: `v = v_pre (1 - s) + v_reset s`.
pub fn post_reset(v_pre: f64, spike: f64, cfg: &NeuronConfig) -> f64 {
    v_pre * (1.0 - spike) + cfg.v_reset * spike
}
