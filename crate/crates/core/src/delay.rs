//! Congestion-aware dynamic axonal delays.
//!
//! Every input channel `j` of a layer carries a learnable base delay
//! `d_base[j]`. In dynamic mode a single, time-varying shift shared by all
//! channels is added on top of it:
//!
//! ```text
//! a_raw[t]    = mean_j S_j[t - round(d_base[j])]
//! a_smooth[t] = causal box filter of a_raw over k_s steps
//! d_bar[t]    = S(e) * d_max * f(gamma * a_smooth[t])
//! d_shift     = slope_limit(d_bar)          // |increment| <= 0.99
//! d[t][j]     = clamp(d_base[j] + d_shift[t], 0, d_max)
//! ```
//!
//! Delayed inputs are read at the fractional time `t - d[t][j]` by linear
//! interpolation between the two neighbouring steps, which makes the read
//! differentiable in `d`.

use std::fmt::Write as _;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{CadadError, Result};

/// Largest allowed change of the dynamic shift between adjacent steps.
pub const MAX_SHIFT_SLOPE: f64 = 0.99;

/// Minimum emission-time-map increment guaranteed by the slope limiter.
pub const TIME_MAP_MARGIN: f64 = 1.0 - MAX_SHIFT_SLOPE;

/// Squashing function applied to the smoothed congestion level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Nonlinearity {
    #[default]
    Tanh,
    Sigmoid,
    Relu,
    Arctan,
}

impl Nonlinearity {
    pub const ALL: [Nonlinearity; 4] = [
        Nonlinearity::Tanh,
        Nonlinearity::Sigmoid,
        Nonlinearity::Relu,
        Nonlinearity::Arctan,
    ];

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "tanh" => Ok(Nonlinearity::Tanh),
            "sigmoid" => Ok(Nonlinearity::Sigmoid),
            "relu" => Ok(Nonlinearity::Relu),
            "arctan" => Ok(Nonlinearity::Arctan),
            other => Err(CadadError::Config(format!(
                "unknown nonlinearity '{other}' (expected tanh, sigmoid, relu or arctan)"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Nonlinearity::Tanh => "tanh",
            Nonlinearity::Sigmoid => "sigmoid",
            Nonlinearity::Relu => "relu",
            Nonlinearity::Arctan => "arctan",
        }
    }

    pub fn apply(&self, x: f64) -> f64 {
        match self {
            Nonlinearity::Tanh => x.tanh(),
            Nonlinearity::Sigmoid => 1.0 / (1.0 + (-x).exp()),
            Nonlinearity::Relu => x.max(0.0),
            Nonlinearity::Arctan => x.atan(),
        }
    }

    pub fn derivative(&self, x: f64) -> f64 {
        match self {
            Nonlinearity::Tanh => {
                let th = x.tanh();
                1.0 - th * th
            }
            Nonlinearity::Sigmoid => {
                let s = 1.0 / (1.0 + (-x).exp());
                s * (1.0 - s)
            }
            Nonlinearity::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Nonlinearity::Arctan => 1.0 / (1.0 + x * x),
        }
    }
}

/// Which parts of the delay are active in a layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DelayMode {
    /// Inputs pass through undelayed.
    None,
    /// Learnable per-channel base delays only.
    Static,
    /// Base delays plus the congestion-driven global shift.
    #[default]
    Dynamic,
}

impl DelayMode {
    pub const ALL: [DelayMode; 3] = [DelayMode::None, DelayMode::Static, DelayMode::Dynamic];

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(DelayMode::None),
            "static" => Ok(DelayMode::Static),
            "dynamic" => Ok(DelayMode::Dynamic),
            other => Err(CadadError::Config(format!(
                "unknown delay mode '{other}' (expected none, static or dynamic)"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            DelayMode::None => "none",
            DelayMode::Static => "static",
            DelayMode::Dynamic => "dynamic",
        }
    }
}

/// Hyperparameters of the delay mechanism. Delays are in time steps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DelayConfig {
    pub d_max: f64,
    /// Congestion sensitivity.
    pub gamma: f64,
    /// Smoothing window length.
    pub k_s: usize,
    pub s_max: f64,
    pub s_min: f64,
    /// Epochs over which the shift scale decays from `s_max` to `s_min`.
    pub e_decay: u32,
    pub nonlinearity: Nonlinearity,
    /// Let gradients flow from the delays back into the congestion estimate.
    #[serde(default)]
    pub shift_grad: bool,
}

impl Default for DelayConfig {
    fn default() -> Self {
        DelayConfig {
            d_max: 25.0,
            gamma: 1.0,
            k_s: 20,
            s_max: 0.3,
            s_min: 0.02,
            e_decay: 30,
            nonlinearity: Nonlinearity::Tanh,
            shift_grad: false,
        }
    }
}

impl DelayConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.d_max > 0.0 && self.d_max.is_finite()) {
            return Err(CadadError::Config(format!(
                "delay.d_max must be positive, got {}",
                self.d_max
            )));
        }
        if !(self.gamma > 0.0) {
            return Err(CadadError::Config(format!(
                "delay.gamma must be positive, got {}",
                self.gamma
            )));
        }
        if self.k_s == 0 {
            return Err(CadadError::Config("delay.k_s must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.s_max) || !(self.s_min >= 0.0 && self.s_min <= self.s_max) {
            return Err(CadadError::Config(format!(
                "delay scales need 0 <= s_min <= s_max <= 1, got s_min={} s_max={}",
                self.s_min, self.s_max
            )));
        }
        anneal_scale(0, self.s_max, self.s_min, self.e_decay).map(|_| ())
    }

    pub fn scale(&self, epoch: u32) -> Result<f64> {
        anneal_scale(epoch, self.s_max, self.s_min, self.e_decay)
    }
}

/// Fraction of channels whose base-delayed spike lands on each step.
///
/// Lookups use `round(d_base[j])` and read zero before `t = 0`.
pub fn congestion_raw(spikes: ArrayView2<'_, f64>, d_base: &[f64]) -> Vec<f64> {
    let (t_len, c) = spikes.dim();
    let offsets: Vec<usize> = d_base.iter().map(|&d| round_half_up(d) as usize).collect();
    let inv_c = 1.0 / c as f64;
    (0..t_len)
        .map(|t| {
            let mut acc = 0.0;
            for (j, &off) in offsets.iter().enumerate() {
                if t >= off {
                    acc += spikes[[t - off, j]];
                }
            }
            acc * inv_c
        })
        .collect()
}

/// Causal moving average over `k_s` steps with zero left padding.
pub fn smooth(a_raw: &[f64], k_s: usize) -> Vec<f64> {
    let k = k_s.max(1);
    let inv = 1.0 / k as f64;
    (0..a_raw.len())
        .map(|t| {
            let lo = (t + 1).saturating_sub(k);
            a_raw[lo..=t].iter().sum::<f64>() * inv
        })
        .collect()
}

/// Epoch-dependent shift scale, decaying geometrically from `s_max` to `s_min`.
pub fn anneal_scale(epoch: u32, s_max: f64, s_min: f64, e_decay: u32) -> Result<f64> {
    if s_min > s_max {
        return Err(CadadError::Config(format!("s_min ({s_min}) exceeds s_max ({s_max})")));
    }
    if e_decay == 0 {
        return Ok(s_min);
    }
    if s_min == s_max {
        return Ok(s_max);
    }
    if s_min <= 0.0 {
        return Err(CadadError::Config(
            "s_min must be positive when e_decay > 0 and s_min < s_max (geometric decay towards zero is undefined)"
                .into(),
        ));
    }
    if epoch == 0 {
        return Ok(s_max);
    }
    if epoch == e_decay {
        return Ok(s_min);
    }
    let ratio = s_min / s_max;
    let s = s_max * ratio.powf(epoch as f64 / e_decay as f64);
    Ok(s.max(s_min))
}

/// Unlimited shift: `scale * d_max * f(gamma * a_smooth[t])`.
pub fn raw_shift(a_smooth: &[f64], scale: f64, gamma: f64, d_max: f64, nonlinearity: Nonlinearity) -> Vec<f64> {
    let amp = scale * d_max;
    a_smooth.iter().map(|&a| amp * nonlinearity.apply(gamma * a)).collect()
}

/// Causal slope limiter: each increment is clipped to `[-0.99, 0.99]`.
pub fn slope_limit(d_bar: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(d_bar.len());
    if let Some(&first) = d_bar.first() {
        out.push(first);
        for t in 1..d_bar.len() {
            let inc = (d_bar[t] - d_bar[t - 1]).clamp(-MAX_SHIFT_SLOPE, MAX_SHIFT_SLOPE);
            out.push(out[t - 1] + inc);
        }
    }
    out
}

/// Vector-Jacobian product of [`slope_limit`]. Clipped increments pass no gradient.
pub fn slope_limit_backward(d_bar: &[f64], grad_out: &[f64]) -> Vec<f64> {
    let n = d_bar.len();
    let mut grad = vec![0.0; n];
    // every output from t on contains increment t
    let mut tail = 0.0;
    for t in (0..n).rev() {
        tail += grad_out[t];
        if t == 0 {
            grad[0] += tail;
        } else {
            let inc = d_bar[t] - d_bar[t - 1];
            if inc.abs() < MAX_SHIFT_SLOPE {
                grad[t] += tail;
                grad[t - 1] -= tail;
            }
        }
    }
    grad
}

/// `d[t][j] = clamp(d_base[j] + d_shift[t], 0, d_max)`.
pub fn effective_delay(d_base: &[f64], d_shift: &[f64], d_max: f64) -> Array2<f64> {
    Array2::from_shape_fn((d_shift.len(), d_base.len()), |(t, j)| {
        (d_base[j] + d_shift[t]).clamp(0.0, d_max)
    })
}

/// Round half up.
pub fn round_half_up(x: f64) -> i64 {
    (x + 0.5).floor() as i64
}

/// Integer delays for inference.
pub fn discretize_for_inference(d: ArrayView2<'_, f64>) -> Array2<i64> {
    d.map(|&x| round_half_up(x))
}

/// Interpolation coordinates of a fractional read at `t - d[t][j]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReadCoords {
    pub floor_idx: Array2<i64>,
    pub ceil_idx: Array2<i64>,
    pub frac: Array2<f64>,
}

impl ReadCoords {
    pub fn new(d: ArrayView2<'_, f64>) -> Result<Self> {
        let dim = d.dim();
        let mut floor_idx = Array2::zeros(dim);
        let mut ceil_idx = Array2::zeros(dim);
        let mut frac = Array2::zeros(dim);
        for ((t, j), &dj) in d.indexed_iter() {
            if !(dj >= 0.0) {
                return Err(CadadError::Contract(format!(
                    "negative or NaN delay {dj} at t={t}, channel {j}"
                )));
            }
            let tp = t as f64 - dj;
            let fl = tp.floor();
            let delta = tp - fl;
            floor_idx[[t, j]] = fl as i64;
            ceil_idx[[t, j]] = if delta == 0.0 { fl as i64 } else { fl as i64 + 1 };
            frac[[t, j]] = delta;
        }
        Ok(ReadCoords {
            floor_idx,
            ceil_idx,
            frac,
        })
    }
}

#[inline]
fn sample(signal: &ArrayView2<'_, f64>, idx: i64, j: usize) -> f64 {
    if idx < 0 {
        0.0
    } else {
        signal[[idx as usize, j]]
    }
}

fn read_with(signal: ArrayView2<'_, f64>, coords: &ReadCoords) -> Array2<f64> {
    Array2::from_shape_fn(signal.dim(), |(t, j)| {
        let delta = coords.frac[[t, j]];
        let lo = sample(&signal, coords.floor_idx[[t, j]], j);
        let hi = sample(&signal, coords.ceil_idx[[t, j]], j);
        (1.0 - delta) * lo + delta * hi
    })
}

/// Linearly interpolated read of `signal` at `t - d[t][j]`, zero before `t = 0`.
pub fn delayed_read(signal: ArrayView2<'_, f64>, d: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    if signal.dim() != d.dim() {
        return Err(CadadError::Contract(format!(
            "delayed_read: signal {:?} vs delays {:?}",
            signal.dim(),
            d.dim()
        )));
    }
    let coords = ReadCoords::new(d)?;
    Ok(read_with(signal, &coords))
}

/// Gradients of a delayed read with respect to the signal and the delays.
#[derive(Debug, Clone, PartialEq)]
pub struct ReadGrads {
    pub signal: Array2<f64>,
    pub delay: Array2<f64>,
}

/// Backward pass of [`delayed_read`].
///
/// `grad_d[t][j] = upstream[t][j] * (S_j[floor] - S_j[ceil])`; the signal
/// receives `(1 - frac)` of the upstream gradient at the floor index and
/// `frac` of it at the ceiling index.
pub fn delayed_read_backward(
    upstream: ArrayView2<'_, f64>,
    signal: ArrayView2<'_, f64>,
    coords: &ReadCoords,
) -> Result<ReadGrads> {
    if upstream.dim() != signal.dim() || coords.frac.dim() != signal.dim() {
        return Err(CadadError::Contract(format!(
            "delayed_read_backward: upstream {:?}, signal {:?}, trace {:?}",
            upstream.dim(),
            signal.dim(),
            coords.frac.dim()
        )));
    }
    let (t_len, c) = signal.dim();
    let mut g_sig = Array2::zeros((t_len, c));
    let mut g_d = Array2::zeros((t_len, c));
    for t in 0..t_len {
        for j in 0..c {
            let up = upstream[[t, j]];
            if up == 0.0 {
                continue;
            }
            let lo = coords.floor_idx[[t, j]];
            let hi = coords.ceil_idx[[t, j]];
            let delta = coords.frac[[t, j]];
            g_d[[t, j]] = up * (sample(&signal, lo, j) - sample(&signal, hi, j));
            if lo >= 0 {
                g_sig[[lo as usize, j]] += up * (1.0 - delta);
            }
            if hi >= 0 {
                g_sig[[hi as usize, j]] += up * delta;
            }
        }
    }
    Ok(ReadGrads {
        signal: g_sig,
        delay: g_d,
    })
}

/// Result of checking that the emission-time map `t - d[t]` keeps its order.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeMapReport {
    pub ok: bool,
    /// Smallest `1 - (d[t] - d[t-1])`; 1.0 for sequences shorter than two.
    pub min_margin: f64,
    pub violations: Vec<usize>,
}

pub fn check_time_map(d_shift: &[f64]) -> TimeMapReport {
    let mut min_margin = 1.0f64;
    let mut violations = Vec::new();
    for t in 1..d_shift.len() {
        let margin = 1.0 - (d_shift[t] - d_shift[t - 1]);
        min_margin = min_margin.min(margin);
        // tolerate the rounding of the limiter's own accumulation
        if margin < TIME_MAP_MARGIN - 1e-9 {
            violations.push(t);
        }
    }
    TimeMapReport {
        ok: violations.is_empty(),
        min_margin,
        violations,
    }
}

/// Everything a layer's delay stage computed on one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct DelayTrace {
    pub mode: DelayMode,
    pub scale: f64,
    pub a_raw: Vec<f64>,
    pub a_smooth: Vec<f64>,
    /// Shift before slope limiting.
    pub d_bar: Vec<f64>,
    pub d_shift: Vec<f64>,
    pub d_eff: Array2<f64>,
    pub coords: ReadCoords,
    pub discretized: bool,
}

impl DelayTrace {
    /// Delay pipeline for one sample (`signal` is `[T x C]`).
    pub fn compute(
        signal: ArrayView2<'_, f64>,
        d_base: &[f64],
        cfg: &DelayConfig,
        mode: DelayMode,
        epoch: u32,
        discretize: bool,
    ) -> Result<Self> {
        let (t_len, c) = signal.dim();
        if d_base.len() != c {
            return Err(CadadError::Contract(format!(
                "{} base delays for {} channels",
                d_base.len(),
                c
            )));
        }
        let (scale, a_raw, a_smooth, d_bar, d_shift) = match mode {
            DelayMode::Dynamic => {
                let scale = cfg.scale(epoch)?;
                let a_raw = congestion_raw(signal, d_base);
                let a_smooth = smooth(&a_raw, cfg.k_s);
                let d_bar = raw_shift(&a_smooth, scale, cfg.gamma, cfg.d_max, cfg.nonlinearity);
                let d_shift = slope_limit(&d_bar);
                (scale, a_raw, a_smooth, d_bar, d_shift)
            }
            DelayMode::Static | DelayMode::None => (
                0.0,
                vec![0.0; t_len],
                vec![0.0; t_len],
                vec![0.0; t_len],
                vec![0.0; t_len],
            ),
        };
        let mut d_eff = match mode {
            DelayMode::None => Array2::zeros((t_len, c)),
            _ => effective_delay(d_base, &d_shift, cfg.d_max),
        };
        if discretize {
            d_eff.mapv_inplace(|x| round_half_up(x) as f64);
        }
        let coords = ReadCoords::new(d_eff.view())?;
        Ok(DelayTrace {
            mode,
            scale,
            a_raw,
            a_smooth,
            d_bar,
            d_shift,
            d_eff,
            coords,
            discretized: discretize,
        })
    }

    /// Delayed version of `signal`. Mode `none` returns the signal unchanged.
    pub fn read(&self, signal: ArrayView2<'_, f64>) -> Array2<f64> {
        match self.mode {
            DelayMode::None => signal.to_owned(),
            _ => read_with(signal, &self.coords),
        }
    }

    /// Writes `t,a_raw,a_smooth,d_shift,min_d_eff,max_d_eff` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,a_raw,a_smooth,d_shift,min_d_eff,max_d_eff\n");
        for t in 0..self.d_shift.len() {
            let row = self.d_eff.row(t);
            let lo = row.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let _ = writeln!(
                out,
                "{t},{},{},{},{},{}",
                self.a_raw[t], self.a_smooth[t], self.d_shift[t], lo, hi
            );
        }
        out
    }
}

/// Gradients leaving a layer's delay stage.
#[derive(Debug, Clone, PartialEq)]
pub struct DelayBackward {
    pub signal: Array2<f64>,
    pub d_base: Vec<f64>,
}

/// Routes the gradient of the delayed signal back to the raw signal and the
/// base delays.
///
/// The clamp passes gradient straight through while `d_base + d_shift`
/// lies inside `[0, d_max]`. The shift path (congestion estimate) is a
/// stop-gradient unless `cfg.shift_grad` is set, in which case its gradient
/// reaches the spike values feeding the congestion estimate. The rounded
/// congestion lookup is never differentiated with respect to `d_base`.
pub fn delay_backward(
    upstream: ArrayView2<'_, f64>,
    signal: ArrayView2<'_, f64>,
    trace: &DelayTrace,
    d_base: &[f64],
    cfg: &DelayConfig,
) -> Result<DelayBackward> {
    let (t_len, c) = signal.dim();
    if trace.mode == DelayMode::None {
        return Ok(DelayBackward {
            signal: upstream.to_owned(),
            d_base: vec![0.0; c],
        });
    }
    let ReadGrads {
        signal: mut g_sig,
        delay: g_d,
    } = delayed_read_backward(upstream, signal, &trace.coords)?;

    let mut g_base = vec![0.0; c];
    let mut g_shift = vec![0.0; t_len];
    if !trace.discretized {
        for t in 0..t_len {
            for j in 0..c {
                let pre = d_base[j] + trace.d_shift[t];
                if (0.0..=cfg.d_max).contains(&pre) {
                    let g = g_d[[t, j]];
                    g_base[j] += g;
                    g_shift[t] += g;
                }
            }
        }
    }

    if trace.mode == DelayMode::Dynamic && cfg.shift_grad && !trace.discretized {
        let g_bar = slope_limit_backward(&trace.d_bar, &g_shift);
        let amp = trace.scale * cfg.d_max * cfg.gamma;
        let g_smooth: Vec<f64> = g_bar
            .iter()
            .zip(&trace.a_smooth)
            .map(|(&g, &a)| g * amp * cfg.nonlinearity.derivative(cfg.gamma * a))
            .collect();
        // adjoint of the causal box filter
        let k = cfg.k_s.max(1);
        let inv_k = 1.0 / k as f64;
        let mut g_raw = vec![0.0; t_len];
        for (t, &g) in g_smooth.iter().enumerate() {
            let lo = (t + 1).saturating_sub(k);
            for gr in &mut g_raw[lo..=t] {
                *gr += g * inv_k;
            }
        }
        let inv_c = 1.0 / c as f64;
        for (j, &db) in d_base.iter().enumerate() {
            let off = round_half_up(db) as usize;
            for t in off..t_len {
                g_sig[[t - off, j]] += g_raw[t] * inv_c;
            }
        }
    }

    Ok(DelayBackward {
        signal: g_sig,
        d_base: g_base,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    #[test]
    fn congestion_examples() {
        let all = Array2::from_elem((5, 3), 1.0);
        assert_eq!(congestion_raw(all.view(), &[0.0; 3]), vec![1.0; 5]);
        let none = Array2::zeros((5, 3));
        assert_eq!(congestion_raw(none.view(), &[0.0; 3]), vec![0.0; 5]);
        let mut s = Array2::zeros((5, 4));
        s[[3, 0]] = 1.0;
        s[[3, 2]] = 1.0;
        assert_eq!(congestion_raw(s.view(), &[0.0; 4])[3], 0.5);
    }

    #[test]
    fn congestion_uses_rounded_base_delay() {
        let mut s = Array2::zeros((6, 2));
        s[[1, 0]] = 1.0;
        s[[1, 1]] = 1.0;
        // 1.6 rounds to 2, 0.4 rounds to 0
        let a = congestion_raw(s.view(), &[1.6, 0.4]);
        assert_eq!(a, vec![0.0, 0.5, 0.0, 0.5, 0.0, 0.0]);
    }

    #[test]
    fn smooth_examples() {
        let a = [0.3, 0.9, 0.1];
        assert_eq!(smooth(&a, 1), a.to_vec());
        assert_eq!(smooth(&[1.0, 0.0, 0.0, 0.0], 2), vec![0.5, 0.5, 0.0, 0.0]);
        let c = smooth(&[0.25; 10], 4);
        for v in &c[3..] {
            assert!((v - 0.25).abs() < 1e-15);
        }
        assert_eq!(c[0], 0.0625);
    }

    #[test]
    fn anneal_examples() {
        assert_eq!(anneal_scale(0, 0.3, 0.02, 30).unwrap(), 0.3);
        assert_eq!(anneal_scale(30, 0.3, 0.02, 30).unwrap(), 0.02);
        assert_eq!(anneal_scale(90, 0.3, 0.02, 30).unwrap(), 0.02);
        for e in [0, 1, 7, 100] {
            assert_eq!(anneal_scale(e, 0.3, 0.02, 0).unwrap(), 0.02);
        }
        let mid = anneal_scale(15, 0.3, 0.02, 30).unwrap();
        assert!((mid - (0.3f64 * 0.02).sqrt()).abs() < 1e-12);
        assert!(anneal_scale(1, 0.3, 0.0, 10).is_err());
        assert!(anneal_scale(1, 0.1, 0.2, 10).is_err());
        assert_eq!(anneal_scale(5, 0.0, 0.0, 10).unwrap(), 0.0);
    }

    #[test]
    fn raw_shift_examples() {
        assert_eq!(raw_shift(&[0.0], 0.3, 1.0, 25.0, Nonlinearity::Tanh), vec![0.0]);
        let v = raw_shift(&[1.0], 0.02, 1.0, 25.0, Nonlinearity::Tanh)[0];
        // 0.5 * tanh(1), tanh(1) = 0.76159415595576488812
        assert!((v - 0.380_797_077_977_882_4).abs() < 1e-15);
        let s = raw_shift(&[0.0], 0.3, 1.0, 25.0, Nonlinearity::Sigmoid)[0];
        assert!((s - 0.5 * 0.3 * 25.0).abs() < 1e-15);
        for nl in [Nonlinearity::Relu, Nonlinearity::Arctan] {
            assert_eq!(raw_shift(&[0.0], 0.3, 1.0, 25.0, nl), vec![0.0]);
        }
    }

    #[test]
    fn nonlinearity_parse() {
        for nl in Nonlinearity::ALL {
            assert_eq!(Nonlinearity::parse(nl.name()).unwrap(), nl);
        }
        assert!(matches!(Nonlinearity::parse("gelu"), Err(CadadError::Config(_))));
    }

    #[test]
    fn slope_limit_examples() {
        let smooth_in = [0.0, 0.5, 0.2, 1.1];
        assert_eq!(slope_limit(&smooth_in), smooth_in.to_vec());
        assert_eq!(slope_limit(&[0.0, 2.0]), vec![0.0, 0.99]);
        let out = slope_limit(&[1.0, -1.0, 1.0]);
        assert_eq!(out[0], 1.0);
        assert!((out[1] - 0.01).abs() < 1e-15);
        assert!((out[2] - 1.0).abs() < 1e-15);
        assert!(slope_limit(&[]).is_empty());
    }

    #[test]
    fn slope_limit_backward_matches_differences() {
        let d_bar = [0.1, 0.6, 2.0, 1.5, 1.0, 3.5];
        let w = [0.3, -1.0, 0.5, 2.0, -0.7, 1.1];
        let loss = |x: &[f64]| slope_limit(x).iter().zip(&w).map(|(a, b)| a * b).sum::<f64>();
        let g = slope_limit_backward(&d_bar, &w);
        for i in 0..d_bar.len() {
            let h = 1e-6;
            let mut p = d_bar;
            p[i] += h;
            let mut m = d_bar;
            m[i] -= h;
            let fd = (loss(&p) - loss(&m)) / (2.0 * h);
            assert!((fd - g[i]).abs() < 1e-8, "i={i}: {fd} vs {}", g[i]);
        }
    }

    #[test]
    fn effective_delay_examples() {
        let d = effective_delay(&[1.5, 3.0], &[0.0, 0.0], 25.0);
        assert_eq!(d.row(0).to_vec(), vec![1.5, 3.0]);
        assert_eq!(effective_delay(&[24.8], &[0.5], 25.0)[[0, 0]], 25.0);
        assert_eq!(effective_delay(&[0.0], &[-0.3], 25.0)[[0, 0]], 0.0);
    }

    #[test]
    fn delayed_read_examples() {
        let s = array![[0.0], [1.0], [0.0]];
        let id = delayed_read(s.view(), Array2::zeros((3, 1)).view()).unwrap();
        assert_eq!(id, s);
        let half = delayed_read(s.view(), Array2::from_elem((3, 1), 0.5).view()).unwrap();
        assert_eq!(half[[2, 0]], 0.5);
        let one = delayed_read(s.view(), Array2::from_elem((3, 1), 1.0).view()).unwrap();
        assert_eq!(one[[2, 0]], 1.0);
        assert_eq!(one[[0, 0]], 0.0);
        let err = delayed_read(s.view(), Array2::from_elem((3, 1), -0.1).view());
        assert!(matches!(err, Err(CadadError::Contract(_))));
    }

    #[test]
    fn reads_before_start_are_zero() {
        let s = array![[1.0], [1.0]];
        let out = delayed_read(s.view(), Array2::from_elem((2, 1), 0.25).view()).unwrap();
        assert_eq!(out[[0, 0]], 0.75);
        assert_eq!(out[[1, 0]], 1.0);
    }

    #[test]
    fn backward_case_table() {
        // t=2, d=0.5 reads between S[1] (floor) and S[2] (ceil)
        let d = Array2::from_elem((3, 1), 0.5);
        let coords = ReadCoords::new(d.view()).unwrap();
        let mut up = Array2::zeros((3, 1));
        up[[2, 0]] = 0.7;
        for (lo, hi, want) in [(1.0, 0.0, 0.7), (0.0, 1.0, -0.7), (1.0, 1.0, 0.0), (0.0, 0.0, 0.0)] {
            let s = array![[0.0], [lo], [hi]];
            let g = delayed_read_backward(up.view(), s.view(), &coords).unwrap();
            assert_eq!(g.delay[[2, 0]], want);
        }
    }

    #[test]
    fn backward_at_zero_delay() {
        let s = array![[0.2], [1.0], [0.4]];
        let coords = ReadCoords::new(Array2::zeros((3, 1)).view()).unwrap();
        let up = array![[1.0], [2.0], [3.0]];
        let g = delayed_read_backward(up.view(), s.view(), &coords).unwrap();
        assert_eq!(g.signal, up);
        assert!(g.delay.iter().all(|&x| x == 0.0));
        assert_eq!(coords.floor_idx, coords.ceil_idx);
    }

    #[test]
    fn backward_shape_mismatch() {
        let coords = ReadCoords::new(Array2::zeros((3, 1)).view()).unwrap();
        let up = Array2::zeros((2, 1));
        let s = Array2::zeros((3, 1));
        assert!(delayed_read_backward(up.view(), s.view(), &coords).is_err());
    }

    #[test]
    fn discretize_examples() {
        let d = array![[2.4, 2.5, 0.0, 7.0]];
        assert_eq!(discretize_for_inference(d.view()), array![[2, 3, 0, 7]]);
    }

    #[test]
    fn time_map_examples() {
        let r = check_time_map(&[3.0; 10]);
        assert!(r.ok);
        assert_eq!(r.min_margin, 1.0);
        let ramp: Vec<f64> = (0..10).map(|t| 0.99 * t as f64).collect();
        let r = check_time_map(&ramp);
        assert!(r.ok);
        assert!((r.min_margin - 0.01).abs() < 1e-9);
        let r = check_time_map(&[0.0, 1.5]);
        assert!(!r.ok);
        assert_eq!(r.violations, vec![1]);
    }

    #[test]
    fn trace_static_ignores_congestion() {
        let s = Array2::from_elem((8, 3), 1.0);
        let cfg = DelayConfig::default();
        let tr = DelayTrace::compute(s.view(), &[1.0, 2.5, 0.0], &cfg, DelayMode::Static, 0, false).unwrap();
        assert!(tr.d_shift.iter().all(|&x| x == 0.0));
        assert_eq!(tr.d_eff.row(5).to_vec(), vec![1.0, 2.5, 0.0]);
        let csv = tr.to_csv();
        assert!(csv.starts_with("t,a_raw,a_smooth,d_shift,min_d_eff,max_d_eff\n"));
        assert_eq!(csv.lines().count(), 9);
    }

    #[test]
    fn trace_rejects_wrong_channel_count() {
        let s = Array2::zeros((4, 3));
        let err = DelayTrace::compute(
            s.view(),
            &[0.0; 2],
            &DelayConfig::default(),
            DelayMode::Static,
            0,
            false,
        );
        assert!(matches!(err, Err(CadadError::Contract(_))));
    }

    fn spikes_strategy() -> impl Strategy<Value = Array2<f64>> {
        proptest::collection::vec(proptest::bool::weighted(0.3), 40 * 6)
            .prop_map(|v| Array2::from_shape_vec((40, 6), v.into_iter().map(|b| b as u8 as f64).collect()).unwrap())
    }

    proptest! {
        #[test]
        fn composition_invariants(
            spikes in spikes_strategy(),
            base in proptest::collection::vec(0.0f64..12.0, 6),
            gamma in 0.1f64..5.0,
            k_s in 1usize..10,
            epoch in 0u32..40,
        ) {
            let cfg = DelayConfig { d_max: 12.0, gamma, k_s, s_max: 1.0, s_min: 0.05, e_decay: 20, ..DelayConfig::default() };
            let tr = DelayTrace::compute(spikes.view(), &base, &cfg, DelayMode::Dynamic, epoch, false).unwrap();
            let scale = cfg.scale(epoch).unwrap();
            for t in 0..40 {
                prop_assert!((0.0..=1.0).contains(&tr.a_raw[t]));
                prop_assert!((0.0..=1.0 + 1e-12).contains(&tr.a_smooth[t]));
                prop_assert!(tr.d_bar[t] >= 0.0);
                prop_assert!(tr.d_bar[t] <= scale * cfg.d_max * gamma.tanh() + 1e-12);
                if t > 0 {
                    prop_assert!((tr.d_shift[t] - tr.d_shift[t - 1]).abs() <= MAX_SHIFT_SLOPE + 1e-12);
                }
                for j in 0..6 {
                    let d = tr.d_eff[[t, j]];
                    prop_assert!((0.0..=cfg.d_max).contains(&d));
                    prop_assert!((0.0..1.0).contains(&tr.coords.frac[[t, j]]));
                    let gap = tr.coords.ceil_idx[[t, j]] - tr.coords.floor_idx[[t, j]];
                    prop_assert!(gap == 0 || gap == 1);
                }
            }
            let report = check_time_map(&tr.d_shift);
            prop_assert!(report.ok);
            prop_assert!(report.min_margin >= TIME_MAP_MARGIN - 1e-9);
        }

        #[test]
        fn raw_shift_monotone(a in 0.0f64..1.0, b in 0.0f64..1.0, gamma in 0.1f64..4.0) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            for nl in Nonlinearity::ALL {
                let v = raw_shift(&[lo, hi], 0.5, gamma, 10.0, nl);
                prop_assert!(v[0] <= v[1]);
            }
        }

        #[test]
        fn integer_delays_are_shifts(
            spikes in spikes_strategy(),
            shifts in proptest::collection::vec(0usize..8, 6),
        ) {
            let d = Array2::from_shape_fn((40, 6), |(_, j)| shifts[j] as f64);
            let out = delayed_read(spikes.view(), d.view()).unwrap();
            for t in 0..40 {
                for j in 0..6 {
                    let want = if t >= shifts[j] { spikes[[t - shifts[j], j]] } else { 0.0 };
                    prop_assert_eq!(out[[t, j]].to_bits(), want.to_bits());
                }
            }
        }
    }
}
