//! Internal-dynamics metrics: input congestion `u`, threshold overflow,
//! spike counts, and CSV exports of membrane and congestion traces.

use std::fmt::Write as _;

use log::warn;
use ndarray::{ArrayView2, Axis};

use crate::data::Dataset;
use crate::delay::DelayMode;
use crate::error::{CadadError, Result};
use crate::network::{ForwardCache, Network, PassOptions, SampleCache};

/// Peak weighted input drive per output neuron: `max_t sum_j |w_ij| x_j(t)`.
pub fn neuron_congestion(weights: ArrayView2<'_, f64>, inputs: ArrayView2<'_, f64>) -> Vec<f64> {
    let drive = inputs.dot(&weights.mapv(f64::abs).t());
    drive
        .axis_iter(Axis(1))
        .map(|col| col.iter().cloned().fold(0.0f64, f64::max))
        .collect()
}

/// Layer congestion: per-neuron peaks summed over neurons.
pub fn input_congestion_u(weights: ArrayView2<'_, f64>, inputs: ArrayView2<'_, f64>) -> Result<f64> {
    if weights.dim().1 != inputs.dim().1 {
        return Err(CadadError::Contract(format!(
            "weights {:?} vs inputs {:?}",
            weights.dim(),
            inputs.dim()
        )));
    }
    Ok(neuron_congestion(weights, inputs).iter().sum())
}

/// Pre-reset excess over threshold, `sum max(0, v_pre - v_th)`.
pub fn overflow(v_pre: ArrayView2<'_, f64>, v_th: f64) -> f64 {
    v_pre.iter().map(|&v| (v - v_th).max(0.0)).sum()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LayerDynamicsReport {
    pub layer: usize,
    pub u: f64,
    pub overflow: f64,
    pub spike_count: u64,
    pub overflow_per_spike: f64,
}

impl LayerDynamicsReport {
    fn finish(layer: usize, u: f64, overflow: f64, spike_count: u64) -> Self {
        let overflow_per_spike = if spike_count == 0 {
            0.0
        } else {
            overflow / spike_count as f64
        };
        LayerDynamicsReport {
            layer,
            u,
            overflow,
            spike_count,
            overflow_per_spike,
        }
    }
}

/// Per-layer totals plus their sum.
#[derive(Debug, Clone, PartialEq)]
pub struct DynamicsReport {
    pub layers: Vec<LayerDynamicsReport>,
    pub samples: usize,
}

impl DynamicsReport {
    pub fn total(&self) -> LayerDynamicsReport {
        let u = self.layers.iter().map(|l| l.u).sum();
        let o = self.layers.iter().map(|l| l.overflow).sum();
        let s = self.layers.iter().map(|l| l.spike_count).sum();
        LayerDynamicsReport::finish(usize::MAX, u, o, s)
    }

    /// `layer,u,overflow,spikes,overflow_per_spike`, one row per layer and a `sum` row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("layer,u,overflow,spikes,overflow_per_spike\n");
        for l in &self.layers {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                l.layer, l.u, l.overflow, l.spike_count, l.overflow_per_spike
            );
        }
        let t = self.total();
        let _ = writeln!(
            out,
            "sum,{},{},{},{}",
            t.u, t.overflow, t.spike_count, t.overflow_per_spike
        );
        out
    }
}

/// Spiking layers of a network (a membrane readout does not spike).
fn spiking_layers(sample: &SampleCache) -> impl Iterator<Item = usize> + '_ {
    sample
        .layers
        .iter()
        .enumerate()
        .filter(|(_, l)| l.spiking)
        .map(|(k, _)| k)
}

/// Per-layer congestion `u` over the samples of a forward cache.
pub fn layer_u(net: &Network, cache: &ForwardCache) -> Vec<f64> {
    let mut u = vec![0.0; net.layers.len()];
    for s in &cache.samples {
        for (k, lc) in s.layers.iter().enumerate() {
            let x = lc.drive_input();
            u[k] += neuron_congestion(net.layers[k].weights.view(), x.view())
                .iter()
                .sum::<f64>();
        }
    }
    u
}

/// Mean `|d_shift|` over samples, time and dynamic layers (0 without any).
pub fn mean_abs_shift(cache: &ForwardCache) -> f64 {
    let mut acc = 0.0;
    let mut n = 0usize;
    for s in &cache.samples {
        for lc in &s.layers {
            if lc.trace.mode == DelayMode::Dynamic {
                acc += lc.trace.d_shift.iter().map(|x| x.abs()).sum::<f64>();
                n += lc.trace.d_shift.len();
            }
        }
    }
    if n == 0 {
        0.0
    } else {
        acc / n as f64
    }
}

/// Aggregates congestion, overflow and spikes of every spiking layer over `data`.
pub fn dynamics_report(net: &Network, data: &Dataset, opts: PassOptions) -> Result<DynamicsReport> {
    if data.is_empty() {
        return Err(CadadError::Contract("dynamics report over an empty slice".into()));
    }
    let (_, cache) = net.forward(
        &data.inputs,
        PassOptions {
            training: false,
            ..opts
        },
        &[],
    )?;
    let n_layers = net.layers.len();
    let mut u = vec![0.0; n_layers];
    let mut ov = vec![0.0; n_layers];
    let mut spikes = vec![0u64; n_layers];
    for s in &cache.samples {
        for k in spiking_layers(s).collect::<Vec<_>>() {
            let lc = &s.layers[k];
            u[k] += input_congestion_u(net.layers[k].weights.view(), lc.delayed.view())?;
            ov[k] += overflow(lc.v_pre.view(), net.neuron.v_threshold);
            spikes[k] += lc.spikes.iter().filter(|&&x| x > 0.0).count() as u64;
        }
    }
    let layers = spiking_layers(&cache.samples[0])
        .map(|k| LayerDynamicsReport::finish(k, u[k], ov[k], spikes[k]))
        .collect();
    Ok(DynamicsReport {
        layers,
        samples: data.len(),
    })
}

/// Membrane traces of the `top_k` most active neurons of `layer` on one sample.
///
/// Columns: `t,neuron_id,v_pre,spike,overflow_magnitude`.
pub fn export_membrane_traces(
    net: &Network,
    sample: ArrayView2<'_, f64>,
    layer: usize,
    top_k: usize,
    opts: PassOptions,
) -> Result<String> {
    if top_k == 0 {
        return Err(CadadError::Contract("top_k must be at least 1".into()));
    }
    if layer >= net.layers.len() {
        return Err(CadadError::Index(format!(
            "layer {layer} of a {}-layer network",
            net.layers.len()
        )));
    }
    let cache = net.forward_sample(
        sample,
        PassOptions {
            training: false,
            ..opts
        },
        0,
    )?;
    let lc = &cache.layers[layer];
    let counts = lc.spikes.sum_axis(Axis(0));
    let mut order: Vec<usize> = (0..counts.len()).collect();
    // most spikes first, lower id on ties
    order.sort_by(|&a, &b| counts[b].total_cmp(&counts[a]).then(a.cmp(&b)));
    order.truncate(top_k);
    let th = net.neuron.v_threshold;
    let mut out = String::from("t,neuron_id,v_pre,spike,overflow_magnitude\n");
    for t in 0..lc.v_pre.dim().0 {
        for &i in &order {
            let v = lc.v_pre[[t, i]];
            let _ = writeln!(out, "{t},{i},{v},{},{}", lc.spikes[[t, i]], (v - th).max(0.0));
        }
    }
    Ok(out)
}

/// Congestion time series of each dynamic layer on one sample.
///
/// Returns `(layer, csv)` pairs with columns `t,a_raw,a_smooth,d_shift`.
pub fn export_congestion_timeseries(
    net: &Network,
    sample: ArrayView2<'_, f64>,
    opts: PassOptions,
) -> Result<Vec<(usize, String)>> {
    let cache = net.forward_sample(
        sample,
        PassOptions {
            training: false,
            ..opts
        },
        0,
    )?;
    let mut out = Vec::new();
    for (k, lc) in cache.layers.iter().enumerate() {
        if lc.trace.mode != DelayMode::Dynamic {
            continue;
        }
        let tr = &lc.trace;
        let mut csv = String::from("t,a_raw,a_smooth,d_shift\n");
        for t in 0..tr.d_shift.len() {
            let _ = writeln!(csv, "{t},{},{},{}", tr.a_raw[t], tr.a_smooth[t], tr.d_shift[t]);
        }
        out.push((k, csv));
    }
    if out.is_empty() {
        warn!("no dynamic-delay layers: congestion export is empty");
    }
    Ok(out)
}

/// `<run_id>_<layer>_<metric>.csv`
pub fn export_name(run_id: &str, layer: &str, metric: &str) -> String {
    format!("{run_id}_{layer}_{metric}.csv")
}
