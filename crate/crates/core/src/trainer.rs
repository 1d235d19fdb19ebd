//! Optimisation loop: softmax cross-entropy, Adam with decoupled weight
//! decay, one-cycle schedule for weights, cosine schedule for delays.

use std::fmt::Write as _;

use log::info;
use ndarray::{Array2, Array3};
use rand::seq::SliceRandom;

use crate::checkpoint::Checkpoint;
use crate::data::Dataset;
use crate::diagnostics;
use crate::error::{CadadError, Result};
use crate::network::{argmax, softmax_cross_entropy, Gradients, Network, PassOptions};
use crate::seed;

/// Adam moment decay rates and epsilon.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamHyper {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moments of one parameter group.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Moments {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl Moments {
    pub fn zeros(n: usize) -> Self {
        Moments {
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }
}

/// One Adam update of a flat parameter slice; `step` counts from 1.
///
/// Weight decay is decoupled: `p -= lr * weight_decay * p`.
pub fn adam_step(
    params: &mut [f64],
    grads: &[f64],
    moments: &mut Moments,
    step: u64,
    lr: f64,
    weight_decay: f64,
    hyper: &AdamHyper,
) -> Result<()> {
    if params.len() != grads.len() || moments.m.len() != params.len() || moments.v.len() != params.len() {
        return Err(CadadError::Contract(format!(
            "adam_step: {} params, {} grads, {} moments",
            params.len(),
            grads.len(),
            moments.m.len()
        )));
    }
    if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
        return Err(CadadError::Numeric(format!("non-finite gradient at index {i}")));
    }
    let bc1 = 1.0 - hyper.beta1.powi(step as i32);
    let bc2 = 1.0 - hyper.beta2.powi(step as i32);
    for i in 0..params.len() {
        let g = grads[i];
        let m = hyper.beta1 * moments.m[i] + (1.0 - hyper.beta1) * g;
        let v = hyper.beta2 * moments.v[i] + (1.0 - hyper.beta2) * g * g;
        moments.m[i] = m;
        moments.v[i] = v;
        let m_hat = m / bc1;
        let v_hat = v / bc2;
        params[i] -= lr * (m_hat / (v_hat.sqrt() + hyper.eps) + weight_decay * params[i]);
    }
    Ok(())
}

/// Optimiser state for a whole network: one group for weights, one for base delays.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub weights: Vec<Moments>,
    pub delays: Vec<Moments>,
    pub step: u64,
    pub hyper: AdamHyper,
}

impl OptimizerState {
    pub fn new(net: &Network) -> Self {
        OptimizerState {
            weights: net.layers.iter().map(|l| Moments::zeros(l.weights.len())).collect(),
            delays: net.layers.iter().map(|l| Moments::zeros(l.d_base.len())).collect(),
            step: 0,
            hyper: AdamHyper::default(),
        }
    }

    /// Updates weights (with decay) and base delays (without, then projected
    /// onto `[0, d_max]`). Layers without delays keep their zero base delays.
    pub fn apply(
        &mut self,
        net: &mut Network,
        grads: &Gradients,
        lr_w: f64,
        lr_delay: f64,
        weight_decay: f64,
    ) -> Result<()> {
        if !grads.is_finite() {
            return Err(CadadError::Numeric("non-finite gradient".into()));
        }
        self.step += 1;
        let d_max = net.delay.d_max;
        for (k, layer) in net.layers.iter_mut().enumerate() {
            let w = layer
                .weights
                .as_slice_mut()
                .ok_or_else(|| CadadError::Contract("weights not contiguous".into()))?;
            let g = grads.weights[k]
                .as_slice()
                .ok_or_else(|| CadadError::Contract("gradients not contiguous".into()))?;
            adam_step(w, g, &mut self.weights[k], self.step, lr_w, weight_decay, &self.hyper)?;
            if net.spec.layers[k].delay_mode != crate::delay::DelayMode::None {
                adam_step(
                    &mut layer.d_base,
                    &grads.d_base[k],
                    &mut self.delays[k],
                    self.step,
                    lr_delay,
                    0.0,
                    &self.hyper,
                )?;
                for d in &mut layer.d_base {
                    *d = d.clamp(0.0, d_max);
                }
            }
        }
        Ok(())
    }
}

/// Shape of the one-cycle weight schedule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OneCycle {
    /// Fraction of steps spent warming up.
    pub warmup_frac: f64,
    /// Start rate is `lr_max / start_div`.
    pub start_div: f64,
    /// Final rate is `lr_max / final_div`.
    pub final_div: f64,
}

impl Default for OneCycle {
    fn default() -> Self {
        OneCycle {
            warmup_frac: 0.3,
            start_div: 25.0,
            final_div: 1e4,
        }
    }
}

impl OneCycle {
    pub fn peak_step(&self, total_steps: u64) -> u64 {
        ((total_steps.saturating_sub(1)) as f64 * self.warmup_frac).round() as u64
    }

    /// Cosine warm-up to `lr_max` at the peak step, then cosine decay to the floor
    /// at the last step.
    pub fn lr(&self, step: u64, total_steps: u64, lr_max: f64) -> f64 {
        if total_steps <= 1 {
            return lr_max;
        }
        let step = step.min(total_steps - 1);
        let peak = self.peak_step(total_steps);
        let lo = lr_max / self.start_div;
        let hi = lr_max;
        let end = lr_max / self.final_div;
        let cos_interp =
            |from: f64, to: f64, frac: f64| to + (from - to) * 0.5 * (1.0 + (std::f64::consts::PI * frac).cos());
        if step <= peak {
            if peak == 0 {
                return hi;
            }
            cos_interp(lo, hi, step as f64 / peak as f64)
        } else {
            let span = (total_steps - 1 - peak) as f64;
            cos_interp(hi, end, (step - peak) as f64 / span)
        }
    }
}

/// Default-shaped one-cycle rate.
pub fn onecycle_lr(step: u64, total_steps: u64, lr_max: f64) -> f64 {
    OneCycle::default().lr(step, total_steps, lr_max)
}

/// `lr0 * (1 + cos(pi * epoch / epochs)) / 2`
pub fn cosine_delay_lr(epoch: u32, epochs: u32, lr0: f64) -> f64 {
    if epochs == 0 {
        return lr0;
    }
    lr0 * 0.5 * (1.0 + (std::f64::consts::PI * epoch as f64 / epochs as f64).cos())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: u32,
    pub batch_size: usize,
    pub lr_w: f64,
    pub lr_delay: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub eval_every: u32,
    /// Global-norm gradient clip; `None` disables.
    pub grad_clip: Option<f64>,
    pub onecycle: OneCycle,
    /// Evaluate with integer delays.
    pub eval_discretize: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            batch_size: 32,
            lr_w: 1e-3,
            lr_delay: 1e-1,
            weight_decay: 1e-5,
            seed: 0,
            eval_every: 1,
            grad_clip: Some(10.0),
            onecycle: OneCycle::default(),
            eval_discretize: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.eval_every == 0 {
            return Err(CadadError::Config(
                "train.batch_size and train.eval_every must be positive".into(),
            ));
        }
        if !(self.lr_w > 0.0 && self.lr_delay > 0.0) || self.weight_decay < 0.0 {
            return Err(CadadError::Config(
                "learning rates must be positive and weight decay non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq)]
pub struct LogRow {
    pub epoch: u32,
    pub split: &'static str,
    pub loss: f64,
    pub accuracy: f64,
    pub s_e: f64,
    pub lr_w: f64,
    pub lr_delay: f64,
    pub mean_abs_d_shift: f64,
    pub layer_u: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainLog {
    pub rows: Vec<LogRow>,
}

impl TrainLog {
    pub fn header(n_layers: usize) -> String {
        let mut h = String::from("epoch,split,loss,accuracy,s_e,lr_w,lr_delay,mean_abs_d_shift");
        for k in 0..n_layers {
            let _ = write!(h, ",u_layer{k}");
        }
        h
    }

    pub fn row_csv(r: &LogRow) -> String {
        let mut s = format!(
            "{},{},{},{},{},{},{},{}",
            r.epoch, r.split, r.loss, r.accuracy, r.s_e, r.lr_w, r.lr_delay, r.mean_abs_d_shift
        );
        for u in &r.layer_u {
            let _ = write!(s, ",{u}");
        }
        s
    }

    pub fn to_csv(&self, n_layers: usize) -> String {
        let mut out = Self::header(n_layers);
        out.push('\n');
        for r in &self.rows {
            out.push_str(&Self::row_csv(r));
            out.push('\n');
        }
        out
    }

    pub fn last(&self, split: &str) -> Option<&LogRow> {
        self.rows.iter().rev().find(|r| r.split == split)
    }
}

/// Result of [`train`].
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters after the last completed step.
    pub last: Checkpoint,
    /// Best evaluation accuracy seen (first on ties); the initial network
    /// when no evaluation ran.
    pub best: Checkpoint,
    pub best_accuracy: Option<f64>,
    pub log: TrainLog,
    /// Set when training stopped on a numeric failure.
    pub aborted: Option<String>,
}

/// Accuracy, mean loss and layer congestion of `net` on `data`.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub loss: f64,
    pub accuracy: f64,
    pub predictions: Vec<usize>,
    pub mean_abs_d_shift: f64,
    pub layer_u: Vec<f64>,
}

/// Evaluates in batches of `batch_size`.
pub fn evaluate(net: &Network, data: &Dataset, opts: PassOptions, batch_size: usize) -> Result<Evaluation> {
    if data.is_empty() {
        return Err(CadadError::Contract("evaluation over an empty dataset".into()));
    }
    let opts = PassOptions {
        training: false,
        ..opts
    };
    let mut loss = 0.0;
    let mut predictions = Vec::with_capacity(data.len());
    let mut shift_acc = 0.0;
    let mut layer_u = vec![0.0; net.layers.len()];
    let idx: Vec<usize> = (0..data.len()).collect();
    for chunk in idx.chunks(batch_size.max(1)) {
        let part = data.select(chunk);
        let (scores, cache) = net.forward(&part.inputs, opts, &[])?;
        let (l, _) = softmax_cross_entropy(scores.view(), &part.labels)?;
        loss += l * chunk.len() as f64;
        for row in scores.rows() {
            predictions.push(argmax(row.as_slice().expect("row-major scores")));
        }
        shift_acc += diagnostics::mean_abs_shift(&cache) * chunk.len() as f64;
        for (a, b) in layer_u.iter_mut().zip(diagnostics::layer_u(net, &cache)) {
            *a += b;
        }
    }
    let correct = predictions.iter().zip(&data.labels).filter(|(p, l)| p == l).count();
    Ok(Evaluation {
        loss: loss / data.len() as f64,
        accuracy: correct as f64 / data.len() as f64,
        predictions,
        mean_abs_d_shift: shift_acc / data.len() as f64,
        layer_u,
    })
}

/// Loss, correct count and summed gradients of one mini-batch.
pub fn batch_gradients(
    net: &Network,
    inputs: &Array3<f64>,
    labels: &[usize],
    opts: PassOptions,
    dropout_seeds: &[u64],
) -> Result<(f64, usize, Gradients, Array2<f64>, crate::network::ForwardCache)> {
    let (scores, cache) = net.forward(inputs, opts, dropout_seeds)?;
    let (loss, g) = softmax_cross_entropy(scores.view(), labels)?;
    let grads = net.backward(&cache, g.view())?;
    let correct = scores
        .rows()
        .into_iter()
        .zip(labels)
        .filter(|(r, &l)| argmax(r.as_slice().expect("row-major scores")) == l)
        .count();
    Ok((loss, correct, grads, scores, cache))
}

/// Trains `net` on `train_set`, evaluating on `eval_set` every `eval_every`
/// epochs and after the last one.
///
/// `on_row` sees every log row as soon as it is produced.
pub fn train(
    net: Network,
    train_set: &Dataset,
    eval_set: Option<&Dataset>,
    cfg: &TrainConfig,
    mut on_row: impl FnMut(&LogRow),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(CadadError::Contract("training set is empty".into()));
    }
    let mut net = net;
    let initial = Checkpoint {
        network: net.clone(),
        epoch: 0,
        seed: cfg.seed,
    };
    let mut outcome = TrainOutcome {
        last: initial.clone(),
        best: initial,
        best_accuracy: None,
        log: TrainLog::default(),
        aborted: None,
    };
    if cfg.epochs == 0 {
        return Ok(outcome);
    }
    let n = train_set.len();
    let batches_per_epoch = n.div_ceil(cfg.batch_size) as u64;
    let total_steps = batches_per_epoch * cfg.epochs as u64;
    let shuffle_root = seed::derive(cfg.seed, "train.shuffle");
    let dropout_root = seed::derive(cfg.seed, "train.dropout");
    let mut opt = OptimizerState::new(&net);
    let mut global_step = 0u64;

    'epochs: for epoch in 0..cfg.epochs {
        let s_e = net.delay.scale(epoch)?;
        let lr_delay = cosine_delay_lr(epoch, cfg.epochs, cfg.lr_delay);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut seed::rng(seed::derive_indexed(shuffle_root, epoch as u64)));
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        let mut shift_sum = 0.0;
        let mut u_sum = vec![0.0; net.layers.len()];
        let mut lr_w = cfg.lr_w;
        for chunk in order.chunks(cfg.batch_size) {
            let batch = train_set.select(chunk);
            let seeds: Vec<u64> = (0..chunk.len() as u64)
                .map(|i| seed::derive_indexed(dropout_root, global_step * cfg.batch_size as u64 + i))
                .collect();
            let step_result = batch_gradients(&net, &batch.inputs, &batch.labels, PassOptions::train(epoch), &seeds);
            let (loss, ok, mut grads, _, cache) = match step_result {
                Ok(v) => v,
                Err(CadadError::Numeric(msg)) => {
                    outcome.aborted = Some(format!("epoch {epoch}: {msg}"));
                    break 'epochs;
                }
                Err(e) => return Err(e),
            };
            if let Some(clip) = cfg.grad_clip {
                let norm = grads.global_norm();
                if norm > clip {
                    grads.scale(clip / norm);
                }
            }
            lr_w = cfg.onecycle.lr(global_step, total_steps, cfg.lr_w);
            if let Err(e) = opt.apply(&mut net, &grads, lr_w, lr_delay, cfg.weight_decay) {
                match e {
                    CadadError::Numeric(msg) => {
                        outcome.aborted = Some(format!("epoch {epoch}: {msg}"));
                        break 'epochs;
                    }
                    other => return Err(other),
                }
            }
            global_step += 1;
            loss_sum += loss * chunk.len() as f64;
            correct += ok;
            shift_sum += diagnostics::mean_abs_shift(&cache) * chunk.len() as f64;
            for (a, b) in u_sum.iter_mut().zip(diagnostics::layer_u(&net, &cache)) {
                *a += b;
            }
        }
        outcome.last = Checkpoint {
            network: net.clone(),
            epoch: epoch + 1,
            seed: cfg.seed,
        };
        let row = LogRow {
            epoch,
            split: "train",
            loss: loss_sum / n as f64,
            accuracy: correct as f64 / n as f64,
            s_e,
            lr_w,
            lr_delay,
            mean_abs_d_shift: shift_sum / n as f64,
            layer_u: u_sum,
        };
        on_row(&row);
        info!("epoch {epoch}: train loss {:.4} acc {:.3}", row.loss, row.accuracy);
        outcome.log.rows.push(row);

        let last_epoch = epoch + 1 == cfg.epochs;
        if let Some(ev) = eval_set {
            if (epoch + 1) % cfg.eval_every == 0 || last_epoch {
                let res = evaluate(&net, ev, PassOptions::eval(epoch, cfg.eval_discretize), cfg.batch_size)?;
                let row = LogRow {
                    epoch,
                    split: "eval",
                    loss: res.loss,
                    accuracy: res.accuracy,
                    s_e,
                    lr_w,
                    lr_delay,
                    mean_abs_d_shift: res.mean_abs_d_shift,
                    layer_u: res.layer_u,
                };
                on_row(&row);
                info!("epoch {epoch}: eval acc {:.3}", res.accuracy);
                outcome.log.rows.push(row);
                if outcome.best_accuracy.is_none_or(|b| res.accuracy > b) {
                    outcome.best_accuracy = Some(res.accuracy);
                    outcome.best = Checkpoint {
                        network: net.clone(),
                        epoch,
                        seed: cfg.seed,
                    };
                }
            }
        }
    }
    if eval_set.is_none() {
        outcome.best = outcome.last.clone();
    }
    Ok(outcome)
}
