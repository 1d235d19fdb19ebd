//! Building blocks shared by the command line and the test suites: data
//! preparation, single training runs and the delay-mode ablation.

use std::fmt::Write as _;
use std::time::Instant;

use log::info;

use crate::config::RunConfig;
use crate::data::{load_event_file, synth_coincidence_task, Dataset};
use crate::delay::DelayMode;
use crate::diagnostics::{dynamics_report, DynamicsReport};
use crate::error::{CadadError, Result};
use crate::network::{Network, PassOptions};
use crate::seed;
use crate::trainer::{evaluate, train, TrainOutcome};

/// Train and eval splits described by `cfg`: event files when `data.train`
/// is set, the synthetic task otherwise.
pub fn prepare_data(cfg: &RunConfig) -> Result<(Dataset, Dataset)> {
    match &cfg.train_path {
        Some(train_path) => {
            let eval_path = cfg
                .eval_path
                .as_ref()
                .ok_or_else(|| CadadError::Config("data.train is set but data.eval is not".into()))?;
            let tr = load_event_file(train_path)?;
            let ev = load_event_file(eval_path)?;
            if tr.channels != ev.channels || tr.classes != ev.classes {
                return Err(CadadError::Config(format!(
                    "train file has {} channels / {} classes, eval file {} / {}",
                    tr.channels, tr.classes, ev.channels, ev.classes
                )));
            }
            let binning = crate::data::BinningConfig {
                channels: tr.channels,
                ..cfg.binning
            };
            Ok((
                Dataset::from_streams(&tr.streams, tr.classes, &binning)?,
                Dataset::from_streams(&ev.streams, ev.classes, &binning)?,
            ))
        }
        None => synth_coincidence_task(&cfg.synth)?.datasets(),
    }
}

/// Fresh network for `cfg` in `mode`; the init stream depends only on the seed.
pub fn build_network(cfg: &RunConfig, n_in: usize, n_classes: usize, mode: DelayMode) -> Result<Network> {
    let spec = cfg.network_spec(n_in, n_classes)?.with_mode(mode);
    Network::new(
        spec,
        cfg.neuron,
        cfg.delay,
        cfg.init_gain,
        seed::derive(cfg.seed, "network.init"),
    )
}

/// Outcome of one training run plus its final evaluation.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub mode: DelayMode,
    pub seed: u64,
    pub outcome: TrainOutcome,
    /// Final network, integer delays.
    pub accuracy: f64,
    /// Final network, interpolated delays.
    pub accuracy_continuous: f64,
    pub dynamics: DynamicsReport,
    pub n_params: usize,
    pub n_delay_params: usize,
    pub seconds: f64,
}

/// Trains in `cfg.delay_mode` and evaluates the final network both ways.
pub fn run_training(cfg: &RunConfig, train_set: &Dataset, eval_set: &Dataset) -> Result<RunResult> {
    let start = Instant::now();
    let net = build_network(cfg, train_set.channels(), train_set.n_classes, cfg.delay_mode)?;
    let n_params = net.n_params();
    let n_delay_params = net.delay_param_counts().iter().sum();
    let outcome = train(net, train_set, Some(eval_set), &cfg.train, |_| {})?;
    if let Some(msg) = &outcome.aborted {
        return Err(CadadError::Numeric(msg.clone()));
    }
    let net = &outcome.last.network;
    let epoch = cfg.train.epochs;
    let bs = cfg.train.batch_size;
    let accuracy = evaluate(net, eval_set, PassOptions::eval(epoch, true), bs)?.accuracy;
    let accuracy_continuous = evaluate(net, eval_set, PassOptions::eval(epoch, false), bs)?.accuracy;
    let dynamics = dynamics_report(net, eval_set, PassOptions::eval(epoch, true))?;
    Ok(RunResult {
        mode: cfg.delay_mode,
        seed: cfg.seed,
        outcome,
        accuracy,
        accuracy_continuous,
        dynamics,
        n_params,
        n_delay_params,
        seconds: start.elapsed().as_secs_f64(),
    })
}

/// Every mode over every seed; all modes of a seed share data and weight init.
#[derive(Debug, Clone)]
pub struct Ablation {
    pub runs: Vec<RunResult>,
}

pub fn ablate(cfg: &RunConfig, seeds: &[u64], modes: &[DelayMode]) -> Result<Ablation> {
    let mut runs = Vec::new();
    for &s in seeds {
        let mut c = cfg.clone();
        c.seed = s;
        c.train.seed = s;
        c.synth.seed = s;
        let (tr, ev) = prepare_data(&c)?;
        for &mode in modes {
            c.delay_mode = mode;
            let r = run_training(&c, &tr, &ev)?;
            info!(
                "seed {s} {}: accuracy {:.3} (continuous {:.3}) in {:.1}s",
                mode.name(),
                r.accuracy,
                r.accuracy_continuous,
                r.seconds
            );
            runs.push(r);
        }
    }
    Ok(Ablation { runs })
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    (m, v.sqrt())
}

impl Ablation {
    pub fn of_mode(&self, mode: DelayMode) -> impl Iterator<Item = &RunResult> {
        self.runs.iter().filter(move |r| r.mode == mode)
    }

    /// Mean final accuracy of `mode` (integer delays).
    pub fn mean_accuracy(&self, mode: DelayMode) -> f64 {
        let xs: Vec<f64> = self.of_mode(mode).map(|r| r.accuracy).collect();
        mean_std(&xs).0
    }

    /// Mean accuracy of `mode` with interpolated delays.
    pub fn mean_accuracy_continuous(&self, mode: DelayMode) -> f64 {
        let xs: Vec<f64> = self.of_mode(mode).map(|r| r.accuracy_continuous).collect();
        mean_std(&xs).0
    }

    /// `method,params,delay_params,accuracy_mean,accuracy_std,runs`
    pub fn summary_csv(&self) -> String {
        let mut out = String::from("method,params,delay_params,accuracy_mean,accuracy_std,runs\n");
        for mode in DelayMode::ALL {
            let rs: Vec<&RunResult> = self.of_mode(mode).collect();
            if rs.is_empty() {
                continue;
            }
            let acc: Vec<f64> = rs.iter().map(|r| r.accuracy).collect();
            let (m, s) = mean_std(&acc);
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                mode.name(),
                rs[0].n_params,
                rs[0].n_delay_params,
                m,
                s,
                rs.len()
            );
        }
        out
    }

    /// One row per run.
    pub fn runs_csv(&self) -> String {
        let mut out = String::from("method,seed,accuracy,accuracy_continuous,u_sum,overflow_per_spike,spikes\n");
        for r in &self.runs {
            let t = r.dynamics.total();
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.mode.name(),
                r.seed,
                r.accuracy,
                r.accuracy_continuous,
                t.u,
                t.overflow_per_spike,
                t.spike_count
            );
        }
        out
    }
}
