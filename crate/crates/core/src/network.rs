//! Feedforward spiking networks with per-channel axonal delays.
//!
//! Each layer delays its input channels, applies (inverted) dropout to the
//! delayed spikes during training, mixes them through a weight matrix and
//! drives a LIF population. The final layer is the readout population with
//! one unit per class; for membrane readouts it integrates without
//! threshold or reset.

use ndarray::{Array2, Array3, ArrayView2, Axis};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::delay::{delay_backward, DelayConfig, DelayMode, DelayTrace};
use crate::error::{CadadError, Result};
use crate::seed;
use crate::spike::NeuronConfig;

/// Spike frames laid out as `[sample, time, channel]`.
pub type SpikeTensor = Array3<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Readout {
    /// Time-averaged membrane of a non-spiking integrator.
    #[default]
    MeanMembrane,
    /// Peak membrane of a non-spiking integrator.
    MaxMembrane,
    /// Spike count of a LIF readout population.
    SpikeCount,
}

impl Readout {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "mean_membrane" => Ok(Readout::MeanMembrane),
            "max_membrane" => Ok(Readout::MaxMembrane),
            "spike_count" => Ok(Readout::SpikeCount),
            other => Err(CadadError::Config(format!(
                "unknown readout '{other}' (expected mean_membrane, max_membrane or spike_count)"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Readout::MeanMembrane => "mean_membrane",
            Readout::MaxMembrane => "max_membrane",
            Readout::SpikeCount => "spike_count",
        }
    }

    fn spiking(&self) -> bool {
        matches!(self, Readout::SpikeCount)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub n_in: usize,
    pub n_out: usize,
    pub delay_mode: DelayMode,
    pub dropout_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    /// Hidden layers followed by the readout layer.
    pub layers: Vec<LayerSpec>,
    pub readout: Readout,
    pub n_classes: usize,
}

impl NetworkSpec {
    /// `n_in -> hidden[0] -> ... -> n_classes`, same delay mode and dropout everywhere.
    pub fn feedforward(
        n_in: usize,
        hidden: &[usize],
        n_classes: usize,
        delay_mode: DelayMode,
        dropout_rate: f64,
        readout: Readout,
    ) -> Self {
        let mut sizes = vec![n_in];
        sizes.extend_from_slice(hidden);
        sizes.push(n_classes);
        let layers = sizes
            .windows(2)
            .map(|w| LayerSpec {
                n_in: w[0],
                n_out: w[1],
                delay_mode,
                dropout_rate,
            })
            .collect();
        NetworkSpec {
            layers,
            readout,
            n_classes,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(CadadError::Config("network needs at least one layer".into()));
        }
        for (k, l) in self.layers.iter().enumerate() {
            if l.n_in == 0 || l.n_out == 0 {
                return Err(CadadError::Config(format!("layer {k} has a zero dimension")));
            }
            if !(0.0..1.0).contains(&l.dropout_rate) {
                return Err(CadadError::Config(format!(
                    "layer {k} dropout_rate {} outside [0, 1)",
                    l.dropout_rate
                )));
            }
        }
        for (k, w) in self.layers.windows(2).enumerate() {
            if w[0].n_out != w[1].n_in {
                return Err(CadadError::Config(format!(
                    "layer {k} emits {} channels but layer {} expects {}",
                    w[0].n_out,
                    k + 1,
                    w[1].n_in
                )));
            }
        }
        let last = self.layers.last().map(|l| l.n_out).unwrap_or(0);
        if last != self.n_classes || self.n_classes == 0 {
            return Err(CadadError::Config(format!(
                "readout layer has {last} units for {} classes",
                self.n_classes
            )));
        }
        Ok(())
    }

    pub fn n_inputs(&self) -> usize {
        self.layers[0].n_in
    }

    /// Copy of the spec with every layer switched to `mode`.
    pub fn with_mode(&self, mode: DelayMode) -> Self {
        let mut s = self.clone();
        for l in &mut s.layers {
            l.delay_mode = mode;
        }
        s
    }
}

/// Learnable parameters of one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    /// `[n_out x n_in]`
    pub weights: Array2<f64>,
    /// One base delay per input channel.
    pub d_base: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub spec: NetworkSpec,
    pub neuron: NeuronConfig,
    pub delay: DelayConfig,
    pub layers: Vec<LayerParams>,
}

/// Controls one forward pass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PassOptions {
    /// Drives the shift annealing schedule.
    pub epoch: u32,
    /// Enables dropout.
    pub training: bool,
    /// Round delays to whole steps (inference).
    pub discretize: bool,
}

impl PassOptions {
    pub fn train(epoch: u32) -> Self {
        PassOptions {
            epoch,
            training: true,
            discretize: false,
        }
    }

    pub fn eval(epoch: u32, discretize: bool) -> Self {
        PassOptions {
            epoch,
            training: false,
            discretize,
        }
    }
}

/// What one layer recorded on one sample.
#[derive(Debug, Clone)]
pub struct LayerCache {
    pub input: Array2<f64>,
    pub trace: DelayTrace,
    /// Delayed input before dropout.
    pub delayed: Array2<f64>,
    /// Inverted-dropout multipliers, present only when dropout was active.
    pub mask: Option<Array2<f64>>,
    pub currents: Array2<f64>,
    /// Pre-reset membrane. For a non-spiking readout this is the membrane itself.
    pub v_pre: Array2<f64>,
    pub spikes: Array2<f64>,
    pub spiking: bool,
}

impl LayerCache {
    /// Input after delay and dropout, i.e. what the weights see.
    pub fn drive_input(&self) -> Array2<f64> {
        match &self.mask {
            Some(m) => &self.delayed * m,
            None => self.delayed.clone(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SampleCache {
    pub layers: Vec<LayerCache>,
    pub scores: Vec<f64>,
}

/// Per-sample caches of a batch forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub samples: Vec<SampleCache>,
    pub options: PassOptions,
}

/// Parameter gradients, laid out like [`LayerParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Array2<f64>>,
    pub d_base: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zeros_like(net: &Network) -> Self {
        Gradients {
            weights: net.layers.iter().map(|l| Array2::zeros(l.weights.dim())).collect(),
            d_base: net.layers.iter().map(|l| vec![0.0; l.d_base.len()]).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            *a += b;
        }
        for (a, b) in self.d_base.iter_mut().zip(&other.d_base) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, k: f64) {
        for w in &mut self.weights {
            w.mapv_inplace(|x| x * k);
        }
        for d in &mut self.d_base {
            d.iter_mut().for_each(|x| *x *= k);
        }
    }

    pub fn global_norm(&self) -> f64 {
        let w: f64 = self.weights.iter().flat_map(|w| w.iter()).map(|x| x * x).sum();
        let d: f64 = self.d_base.iter().flatten().map(|x| x * x).sum();
        (w + d).sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(|w| w.iter().all(|x| x.is_finite()))
            && self.d_base.iter().flatten().all(|x| x.is_finite())
    }
}

impl Network {
    /// Random initialisation: weights uniform in `±gain * sqrt(3 / n_in)`,
    /// base delays uniform in `[0, d_max / 2]`.
    pub fn new(
        spec: NetworkSpec,
        neuron: NeuronConfig,
        delay: DelayConfig,
        init_gain: f64,
        seed_value: u64,
    ) -> Result<Self> {
        spec.validate()?;
        neuron.validate()?;
        delay.validate()?;
        let mut rng = seed::rng(seed_value);
        let layers = spec
            .layers
            .iter()
            .map(|l| {
                let a = init_gain * (3.0 / l.n_in as f64).sqrt();
                let weights = Array2::from_shape_fn((l.n_out, l.n_in), |_| rng.gen_range(-a..=a));
                // drawn in every mode so all modes share the same weights for a seed
                let mut d_base: Vec<f64> = (0..l.n_in).map(|_| rng.gen_range(0.0..=delay.d_max / 2.0)).collect();
                if l.delay_mode == DelayMode::None {
                    d_base.fill(0.0);
                }
                LayerParams { weights, d_base }
            })
            .collect();
        Ok(Network {
            spec,
            neuron,
            delay,
            layers,
        })
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.d_base.len()).sum()
    }

    /// Delay parameters per layer; always the layer's input width.
    pub fn delay_param_counts(&self) -> Vec<usize> {
        self.layers.iter().map(|l| l.d_base.len()).collect()
    }

    fn check_params(&self) -> Result<()> {
        self.spec.validate()?;
        for (k, (l, s)) in self.layers.iter().zip(&self.spec.layers).enumerate() {
            if l.weights.dim() != (s.n_out, s.n_in) || l.d_base.len() != s.n_in {
                return Err(CadadError::Contract(format!(
                    "layer {k} parameters do not match its spec"
                )));
            }
        }
        if self.layers.len() != self.spec.layers.len() {
            return Err(CadadError::Contract("layer count mismatch".into()));
        }
        Ok(())
    }

    /// Runs one layer on one sample (`[T x n_in]`).
    pub fn layer_forward(
        &self,
        index: usize,
        input: ArrayView2<'_, f64>,
        opts: PassOptions,
        dropout_seed: u64,
    ) -> Result<LayerCache> {
        let spec = self
            .spec
            .layers
            .get(index)
            .ok_or_else(|| CadadError::Index(format!("layer {index}")))?;
        let params = &self.layers[index];
        let (t_len, c) = input.dim();
        if c != spec.n_in {
            return Err(CadadError::Contract(format!(
                "layer {index} expects {} channels, got {c}",
                spec.n_in
            )));
        }
        let trace = DelayTrace::compute(
            input,
            &params.d_base,
            &self.delay,
            spec.delay_mode,
            opts.epoch,
            opts.discretize,
        )?;
        let delayed = trace.read(input);
        let mask = if opts.training && spec.dropout_rate > 0.0 {
            let keep = 1.0 - spec.dropout_rate;
            let inv = 1.0 / keep;
            let mut rng = seed::rng(seed::derive_indexed(dropout_seed, index as u64));
            Some(Array2::from_shape_fn((t_len, c), |_| {
                if rng.gen::<f64>() < keep {
                    inv
                } else {
                    0.0
                }
            }))
        } else {
            None
        };
        let currents = match &mask {
            Some(m) => (&delayed * m).dot(&params.weights.t()),
            None => delayed.dot(&params.weights.t()),
        };
        let is_readout = index + 1 == self.layers.len();
        let spiking = !is_readout || self.spec.readout.spiking();
        let n = spec.n_out;
        let cfg = &self.neuron;
        let mut v_pre = Array2::zeros((t_len, n));
        let mut spikes = Array2::zeros((t_len, n));
        let mut v = vec![cfg.v_reset; n];
        for t in 0..t_len {
            for i in 0..n {
                let vp = cfg.leak * v[i] + currents[[t, i]];
                if !vp.is_finite() {
                    return Err(CadadError::Numeric(format!(
                        "non-finite membrane in layer {index} at t={t}"
                    )));
                }
                v_pre[[t, i]] = vp;
                if spiking {
                    let s = cfg.fire(vp);
                    spikes[[t, i]] = s;
                    v[i] = vp * (1.0 - s) + cfg.v_reset * s;
                } else {
                    v[i] = vp;
                }
            }
        }
        Ok(LayerCache {
            input: input.to_owned(),
            trace,
            delayed,
            mask,
            currents,
            v_pre,
            spikes,
            spiking,
        })
    }

    fn scores_from(&self, last: &LayerCache) -> Vec<f64> {
        let (t_len, n) = last.v_pre.dim();
        match self.spec.readout {
            Readout::MeanMembrane => last.v_pre.sum_axis(Axis(0)).iter().map(|&s| s / t_len as f64).collect(),
            Readout::MaxMembrane => (0..n)
                .map(|i| last.v_pre.column(i).iter().cloned().fold(f64::NEG_INFINITY, f64::max))
                .collect(),
            Readout::SpikeCount => last.spikes.sum_axis(Axis(0)).to_vec(),
        }
    }

    /// Forward pass of a single sample.
    pub fn forward_sample(
        &self,
        input: ArrayView2<'_, f64>,
        opts: PassOptions,
        dropout_seed: u64,
    ) -> Result<SampleCache> {
        if input.dim().0 == 0 {
            return Err(CadadError::Contract("empty time axis".into()));
        }
        let mut layers: Vec<LayerCache> = Vec::with_capacity(self.layers.len());
        for k in 0..self.layers.len() {
            let cache = match layers.last() {
                Some(prev) => self.layer_forward(k, prev.spikes.view(), opts, dropout_seed)?,
                None => self.layer_forward(k, input, opts, dropout_seed)?,
            };
            layers.push(cache);
        }
        let scores = self.scores_from(layers.last().expect("at least one layer"));
        Ok(SampleCache { layers, scores })
    }

    /// Class scores for every sample of `batch`.
    ///
    /// `dropout_seeds` supplies one seed per sample and is only consulted
    /// when `opts.training` is set.
    pub fn forward(
        &self,
        batch: &SpikeTensor,
        opts: PassOptions,
        dropout_seeds: &[u64],
    ) -> Result<(Array2<f64>, ForwardCache)> {
        self.check_params()?;
        let b = batch.dim().0;
        if opts.training && dropout_seeds.len() != b {
            return Err(CadadError::Contract(format!(
                "{} dropout seeds for {b} samples",
                dropout_seeds.len()
            )));
        }
        let samples: Vec<SampleCache> = (0..b)
            .into_par_iter()
            .map(|i| {
                let s = dropout_seeds.get(i).copied().unwrap_or(0);
                self.forward_sample(batch.index_axis(Axis(0), i), opts, s)
            })
            .collect::<Result<_>>()?;
        let k = self.spec.n_classes;
        let mut scores = Array2::zeros((b, k));
        for (i, s) in samples.iter().enumerate() {
            for (c, &v) in s.scores.iter().enumerate() {
                scores[[i, c]] = v;
            }
        }
        Ok((scores, ForwardCache { samples, options: opts }))
    }

    /// Scores only, no cache kept.
    pub fn predict(&self, batch: &SpikeTensor, opts: PassOptions) -> Result<Array2<f64>> {
        let seeds = vec![0; batch.dim().0];
        self.forward(
            batch,
            PassOptions {
                training: false,
                ..opts
            },
            &seeds,
        )
        .map(|(s, _)| s)
    }

    /// Backpropagation through time for one sample given `d loss / d scores`.
    pub fn backward_sample(&self, cache: &SampleCache, grad_scores: &[f64]) -> Result<Gradients> {
        if cache.layers.len() != self.layers.len() || grad_scores.len() != self.spec.n_classes {
            return Err(CadadError::Contract("cache does not match this network".into()));
        }
        let mut grads = Gradients::zeros_like(self);
        let cfg = &self.neuron;
        let last = cache.layers.last().expect("at least one layer");
        let (t_len, n_last) = last.v_pre.dim();

        // gradient w.r.t. the readout layer's membrane (non-spiking) or spikes (spiking)
        let mut direct = Array2::zeros((t_len, n_last));
        match self.spec.readout {
            Readout::MeanMembrane => {
                let inv = 1.0 / t_len as f64;
                for t in 0..t_len {
                    for i in 0..n_last {
                        direct[[t, i]] = grad_scores[i] * inv;
                    }
                }
            }
            Readout::MaxMembrane => {
                for i in 0..n_last {
                    let col = last.v_pre.column(i);
                    let mut best = 0;
                    for t in 1..t_len {
                        if col[t] > col[best] {
                            best = t;
                        }
                    }
                    direct[[best, i]] = grad_scores[i];
                }
            }
            Readout::SpikeCount => {
                for t in 0..t_len {
                    for i in 0..n_last {
                        direct[[t, i]] = grad_scores[i];
                    }
                }
            }
        }

        // `upstream` holds d loss / d (this layer's output spikes or membrane)
        let mut upstream = direct;
        for k in (0..self.layers.len()).rev() {
            let lc = &cache.layers[k];
            let (t_len, n) = lc.v_pre.dim();
            let mut g_cur = Array2::zeros((t_len, n));
            if lc.spiking {
                let mut g_v_next = vec![0.0; n];
                for t in (0..t_len).rev() {
                    for i in 0..n {
                        let vp = lc.v_pre[[t, i]];
                        let s = lc.spikes[[t, i]];
                        let sg = cfg.surrogate_grad(vp);
                        let g_v = cfg.leak * g_v_next[i];
                        let mut dv = 1.0 - s;
                        if !cfg.detach_reset {
                            dv += (cfg.v_reset - vp) * sg;
                        }
                        let g_vp = upstream[[t, i]] * sg + g_v * dv;
                        g_cur[[t, i]] = g_vp;
                        g_v_next[i] = g_vp;
                    }
                }
            } else {
                let mut g_next = vec![0.0; n];
                for t in (0..t_len).rev() {
                    for i in 0..n {
                        let g = upstream[[t, i]] + cfg.leak * g_next[i];
                        g_cur[[t, i]] = g;
                        g_next[i] = g;
                    }
                }
            }
            let params = &self.layers[k];
            let z = lc.drive_input();
            grads.weights[k] = g_cur.t().dot(&z);
            let mut g_delayed = g_cur.dot(&params.weights);
            if let Some(m) = &lc.mask {
                g_delayed *= m;
            }
            let back = delay_backward(
                g_delayed.view(),
                lc.input.view(),
                &lc.trace,
                &params.d_base,
                &self.delay,
            )?;
            if self.spec.layers[k].delay_mode != DelayMode::None {
                grads.d_base[k] = back.d_base;
            }
            upstream = back.signal;
        }
        Ok(grads)
    }

    /// Sums per-sample gradients over the batch. `loss_grad` is `[B x n_classes]`.
    pub fn backward(&self, cache: &ForwardCache, loss_grad: ArrayView2<'_, f64>) -> Result<Gradients> {
        if loss_grad.dim() != (cache.samples.len(), self.spec.n_classes) {
            return Err(CadadError::Contract(format!(
                "loss gradient {:?} for {} samples",
                loss_grad.dim(),
                cache.samples.len()
            )));
        }
        let per_sample: Vec<Gradients> = cache
            .samples
            .par_iter()
            .enumerate()
            .map(|(i, s)| self.backward_sample(s, &loss_grad.row(i).to_vec()))
            .collect::<Result<_>>()?;
        let mut total = Gradients::zeros_like(self);
        for g in &per_sample {
            total.add_assign(g);
        }
        Ok(total)
    }
}

/// Mean softmax cross-entropy and its gradient with respect to the scores.
pub fn softmax_cross_entropy(scores: ArrayView2<'_, f64>, labels: &[usize]) -> Result<(f64, Array2<f64>)> {
    let (b, k) = scores.dim();
    if labels.len() != b {
        return Err(CadadError::Contract(format!("{} labels for {b} samples", labels.len())));
    }
    let mut grad = Array2::zeros((b, k));
    let mut loss = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        if y >= k {
            return Err(CadadError::Index(format!("label {y} with {k} classes")));
        }
        let row = scores.row(i);
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = row.iter().map(|&s| (s - m).exp()).sum();
        let log_z = m + z.ln();
        loss += log_z - row[y];
        for c in 0..k {
            let p = (row[c] - log_z).exp();
            grad[[i, c]] = (p - if c == y { 1.0 } else { 0.0 }) / b as f64;
        }
    }
    let loss = loss / b as f64;
    if !loss.is_finite() {
        return Err(CadadError::Numeric("non-finite loss".into()));
    }
    Ok((loss, grad))
}

/// Index of the largest score; ties go to the lowest class.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, s};

    fn neuron(leak: f64) -> NeuronConfig {
        NeuronConfig {
            leak,
            ..NeuronConfig::default()
        }
    }

    fn single_layer(mode: DelayMode, weights: Array2<f64>, d_base: Vec<f64>, readout: Readout) -> Network {
        let (n_out, n_in) = weights.dim();
        Network {
            spec: NetworkSpec::feedforward(n_in, &[], n_out, mode, 0.0, readout),
            neuron: neuron(0.5),
            delay: DelayConfig::default(),
            layers: vec![LayerParams { weights, d_base }],
        }
    }

    #[test]
    fn spec_validation() {
        let mut s = NetworkSpec::feedforward(4, &[8], 2, DelayMode::Static, 0.1, Readout::MeanMembrane);
        assert!(s.validate().is_ok());
        s.layers[1].n_in = 7;
        assert!(matches!(s.validate(), Err(CadadError::Config(_))));
        let s = NetworkSpec::feedforward(4, &[8], 2, DelayMode::Static, 1.0, Readout::MeanMembrane);
        assert!(s.validate().is_err());
    }

    #[test]
    fn delay_params_scale_with_inputs() {
        let spec = NetworkSpec::feedforward(12, &[40, 30], 3, DelayMode::Dynamic, 0.0, Readout::MeanMembrane);
        let net = Network::new(spec, NeuronConfig::default(), DelayConfig::default(), 1.0, 1).unwrap();
        assert_eq!(net.delay_param_counts(), vec![12, 40, 30]);
        for l in &net.layers {
            assert!(l.d_base.iter().all(|&d| (0.0..=12.5).contains(&d)));
        }
    }

    #[test]
    fn zero_weights_stay_silent() {
        let spec = NetworkSpec::feedforward(3, &[4], 2, DelayMode::Static, 0.0, Readout::SpikeCount);
        let mut net = Network::new(spec, neuron(0.5), DelayConfig::default(), 1.0, 3).unwrap();
        for l in &mut net.layers {
            l.weights.fill(0.0);
        }
        let x = Array2::from_elem((10, 3), 1.0);
        let out = net.forward_sample(x.view(), PassOptions::eval(0, false), 0).unwrap();
        assert!(out.layers.iter().all(|l| l.spikes.iter().all(|&s| s == 0.0)));
        assert_eq!(out.scores, vec![0.0, 0.0]);
    }

    #[test]
    fn relay_spike_and_static_shift() {
        // 2 -> 2 identity relay into a 2-unit spiking readout
        let mut x = Array2::zeros((8, 2));
        x[[1, 0]] = 1.0;
        let w = array![[1.5, 0.0], [0.0, 1.5]];
        let net = single_layer(DelayMode::None, w.clone(), vec![0.0; 2], Readout::SpikeCount);
        let out = net.forward_sample(x.view(), PassOptions::eval(0, false), 0).unwrap();
        let s = &out.layers[0].spikes;
        assert_eq!(s[[1, 0]], 1.0);
        assert_eq!(s.sum(), 1.0);

        let net = single_layer(DelayMode::Static, w, vec![3.0, 0.0], Readout::SpikeCount);
        let out = net.forward_sample(x.view(), PassOptions::eval(0, false), 0).unwrap();
        let s = &out.layers[0].spikes;
        assert_eq!(s[[4, 0]], 1.0);
        assert_eq!(s.sum(), 1.0);
    }

    #[test]
    fn quiescent_scores_are_equal() {
        let spec = NetworkSpec::feedforward(3, &[5], 4, DelayMode::Dynamic, 0.0, Readout::MeanMembrane);
        let net = Network::new(spec, NeuronConfig::default(), DelayConfig::default(), 1.0, 9).unwrap();
        let x = Array2::zeros((12, 3));
        let out = net.forward_sample(x.view(), PassOptions::eval(0, false), 0).unwrap();
        assert!(out.scores.iter().all(|&s| s == out.scores[0]));
    }

    #[test]
    fn hand_simulated_two_class_scores() {
        // mean-membrane readout with leak 0.5, no delay
        let w = array![[1.0, 0.0], [0.5, 0.5]];
        let net = single_layer(DelayMode::None, w, vec![0.0; 2], Readout::MeanMembrane);
        let x = array![[1.0, 0.0], [0.0, 1.0], [0.0, 0.0]];
        let out = net.forward_sample(x.view(), PassOptions::eval(0, false), 0).unwrap();
        // class 0: v = 1, 0.5, 0.25 ; class 1: v = 0.5, 0.75, 0.375
        assert!((out.scores[0] - 1.75 / 3.0).abs() < 1e-15);
        assert!((out.scores[1] - 1.625 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn readout_permutation_equivariance() {
        let spec = NetworkSpec::feedforward(4, &[6], 3, DelayMode::Static, 0.0, Readout::MeanMembrane);
        let net = Network::new(spec, neuron(0.7), DelayConfig::default(), 2.0, 4).unwrap();
        let mut permuted = net.clone();
        let w = &net.layers[1].weights;
        permuted.layers[1].weights = ndarray::stack![Axis(0), w.row(2), w.row(0), w.row(1)];
        let x = Array2::from_shape_fn((15, 4), |(t, j)| ((t * 3 + j) % 5 == 0) as u8 as f64);
        let a = net.forward_sample(x.view(), PassOptions::eval(0, false), 0).unwrap();
        let b = permuted
            .forward_sample(x.view(), PassOptions::eval(0, false), 0)
            .unwrap();
        assert_eq!(b.scores, vec![a.scores[2], a.scores[0], a.scores[1]]);
    }

    #[test]
    fn zero_loss_grad_gives_zero_gradients() {
        let spec = NetworkSpec::feedforward(4, &[6], 3, DelayMode::Dynamic, 0.0, Readout::MeanMembrane);
        let net = Network::new(spec, neuron(0.7), DelayConfig::default(), 2.0, 4).unwrap();
        let x = Array2::from_shape_fn((15, 4), |(t, j)| ((t + j) % 3 == 0) as u8 as f64);
        let cache = net.forward_sample(x.view(), PassOptions::train(0), 1).unwrap();
        let g = net.backward_sample(&cache, &[0.0; 3]).unwrap();
        assert_eq!(g.global_norm(), 0.0);
    }

    #[test]
    fn one_step_weight_gradient_closed_form() {
        // one time step, one spiking neuron feeding a spike-count readout
        let w = array![[0.8]];
        let net = single_layer(DelayMode::None, w, vec![0.0], Readout::SpikeCount);
        let x = array![[1.0]];
        let cache = net.forward_sample(x.view(), PassOptions::eval(0, false), 0).unwrap();
        let g = net.backward_sample(&cache, &[0.3]).unwrap();
        let expected = 0.3 * crate::spike::surrogate_derivative(0.8 - 1.0, 5.0) * 1.0;
        assert!((g.weights[0][[0, 0]] - expected).abs() < 1e-15);
    }

    #[test]
    fn dropout_only_in_training() {
        let spec = NetworkSpec::feedforward(4, &[6], 3, DelayMode::Static, 0.5, Readout::MeanMembrane);
        let net = Network::new(spec, neuron(0.7), DelayConfig::default(), 2.0, 4).unwrap();
        let x = Array2::from_shape_fn((15, 4), |(t, j)| ((t + j) % 2 == 0) as u8 as f64);
        let eval = net.forward_sample(x.view(), PassOptions::eval(0, false), 0).unwrap();
        assert!(eval.layers.iter().all(|l| l.mask.is_none()));
        let mut no_drop = net.clone();
        for l in &mut no_drop.spec.layers {
            l.dropout_rate = 0.0;
        }
        let eval2 = no_drop
            .forward_sample(x.view(), PassOptions::eval(0, false), 0)
            .unwrap();
        assert_eq!(eval.scores, eval2.scores);
        let tr = net.forward_sample(x.view(), PassOptions::train(0), 11).unwrap();
        let m = tr.layers[0].mask.as_ref().unwrap();
        assert!(m.iter().all(|&v| v == 0.0 || v == 2.0));
    }

    #[test]
    fn softmax_xent_gradient() {
        let scores = array![[1.0, 2.0, 0.5], [0.0, 0.0, 0.0]];
        let (loss, g) = softmax_cross_entropy(scores.view(), &[1, 2]).unwrap();
        let h = 1e-6;
        for i in 0..2 {
            for c in 0..3 {
                let mut p = scores.clone();
                p[[i, c]] += h;
                let mut m = scores.clone();
                m[[i, c]] -= h;
                let fd = (softmax_cross_entropy(p.view(), &[1, 2]).unwrap().0
                    - softmax_cross_entropy(m.view(), &[1, 2]).unwrap().0)
                    / (2.0 * h);
                assert!((fd - g[[i, c]]).abs() < 1e-8);
            }
        }
        assert!((loss - 0.5 * ((1.0 + (-1.0f64).exp() + (-1.5f64).exp()).ln() + 3.0f64.ln())).abs() < 1e-12);
        assert!(softmax_cross_entropy(scores.view(), &[3, 0]).is_err());
    }

    #[test]
    fn batch_forward_matches_samples() {
        let spec = NetworkSpec::feedforward(3, &[5], 2, DelayMode::Dynamic, 0.0, Readout::MeanMembrane);
        let net = Network::new(
            spec,
            neuron(0.6),
            DelayConfig {
                d_max: 6.0,
                k_s: 3,
                ..DelayConfig::default()
            },
            2.0,
            5,
        )
        .unwrap();
        let batch = Array3::from_shape_fn((3, 10, 3), |(b, t, j)| ((b + t * j) % 4 == 0) as u8 as f64);
        let (scores, cache) = net.forward(&batch, PassOptions::eval(0, false), &[]).unwrap();
        for b in 0..3 {
            let one = net
                .forward_sample(batch.slice(s![b, .., ..]), PassOptions::eval(0, false), 0)
                .unwrap();
            assert_eq!(scores.row(b).to_vec(), one.scores);
        }
        assert_eq!(cache.samples.len(), 3);
    }
}
