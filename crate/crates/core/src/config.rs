//! Run configuration: flat `section.key = value` text, one assignment per
//! line, `#` starts a comment. Every key is checked against a fixed schema.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::data::{BinningConfig, SynthConfig};
use crate::delay::{DelayConfig, DelayMode, Nonlinearity};
use crate::error::{CadadError, Result};
use crate::network::{NetworkSpec, Readout};
use crate::spike::{NeuronConfig, Surrogate};
use crate::trainer::TrainConfig;

/// Environment variable that replaces `output.dir`.
pub const OUT_DIR_ENV: &str = "CADAD_OUT_DIR";

/// Every accepted key with a one-line description.
pub const SCHEMA: &[(&str, &str)] = &[
    ("run.seed", "master seed"),
    ("run.id", "prefix of exported file names"),
    ("network.hidden", "comma-separated hidden layer sizes"),
    ("network.readout", "mean_membrane | max_membrane | spike_count"),
    ("network.dropout", "dropout rate on delayed inputs"),
    ("network.init_gain", "weight init scale"),
    ("neuron.tau_ms", "membrane time constant; sets the leak from data.dt_ms"),
    ("neuron.leak", "per-step leak factor; overrides neuron.tau_ms"),
    ("neuron.v_threshold", "firing threshold"),
    ("neuron.v_reset", "reset potential"),
    ("neuron.surrogate", "fast_sigmoid | sigmoid"),
    ("neuron.surrogate_slope", "surrogate sharpness"),
    ("neuron.detach_reset", "drop the reset path from the backward pass"),
    ("delay.mode", "none | static | dynamic"),
    ("delay.max_ms", "maximum delay in ms; sets d_max from data.dt_ms"),
    ("delay.d_max", "maximum delay in steps; overrides delay.max_ms"),
    ("delay.gamma", "congestion sensitivity"),
    ("delay.k_smooth", "congestion smoothing window"),
    ("delay.s_max", "initial shift scale"),
    ("delay.s_min", "final shift scale"),
    ("delay.e_decay", "epochs of shift-scale decay"),
    ("delay.nonlinearity", "tanh | sigmoid | relu | arctan"),
    ("delay.shift_grad", "backpropagate through the congestion estimate"),
    ("train.epochs", "training epochs"),
    ("train.batch_size", "mini-batch size"),
    ("train.lr_w", "peak weight learning rate"),
    ("train.lr_delay", "initial delay learning rate"),
    ("train.weight_decay", "decoupled weight decay on weights"),
    ("train.eval_every", "epochs between evaluations"),
    ("train.grad_clip", "global gradient norm clip; 0 disables"),
    ("train.warmup_frac", "one-cycle warm-up fraction"),
    ("train.div_start", "one-cycle start divisor"),
    ("train.div_final", "one-cycle final divisor"),
    ("train.eval_discretize", "evaluate with integer delays"),
    ("data.train", "training event file; empty uses the synthetic task"),
    ("data.eval", "evaluation event file"),
    ("data.dt_ms", "bin width"),
    ("data.steps", "bins per sample"),
    ("data.clamp_binary", "clip bin counts to 1"),
    ("synth.classes", "classes"),
    ("synth.channels", "input channels"),
    ("synth.max_lag", "largest signature lag in steps"),
    ("synth.group_size", "signature channels per class; 0 splits evenly"),
    ("synth.lag_gap", "minimum spacing of signature lags"),
    ("synth.jitter", "per-spike jitter in steps"),
    ("synth.burst_prob", "per-step burst probability"),
    ("synth.burst_participation", "per-channel firing probability in a burst"),
    ("synth.decoys", "non-signature channels fire once at random"),
    ("synth.n_train", "training samples"),
    ("synth.n_eval", "evaluation samples"),
    ("output.dir", "output directory"),
];

/// Description of `key`, or `None` when it is not in the schema.
pub fn describe(key: &str) -> Option<&'static str> {
    SCHEMA.iter().find(|(k, _)| *k == key).map(|(_, d)| *d)
}

/// `key = value` pairs in file order, with their 1-based line numbers.
pub fn parse_assignments(text: &str) -> Result<Vec<(usize, String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| CadadError::Parse {
            line: i + 1,
            msg: format!("expected `section.key = value`, got `{line}`"),
        })?;
        let k = k.trim();
        if !k.contains('.') || k.split('.').any(str::is_empty) {
            return Err(CadadError::Parse {
                line: i + 1,
                msg: format!("key `{k}` is not of the form section.key"),
            });
        }
        out.push((i + 1, k.to_string(), v.trim().to_string()));
    }
    Ok(out)
}

/// Splits a `--set key=value` argument.
pub fn parse_override(s: &str) -> Result<(String, String)> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| CadadError::Config(format!("override `{s}` is not key=value")))?;
    Ok((k.trim().to_string(), v.trim().to_string()))
}

fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| CadadError::Config(format!("`{key}`: cannot parse `{v}`")))
}

fn flag(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(CadadError::Config(format!(
            "`{key}`: expected true or false, got `{v}`"
        ))),
    }
}

fn opt_path(v: &str) -> Option<PathBuf> {
    (!v.is_empty()).then(|| PathBuf::from(v))
}

/// Fully resolved run configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub run_id: String,
    pub hidden: Vec<usize>,
    pub readout: Readout,
    pub dropout: f64,
    pub init_gain: f64,
    pub delay_mode: DelayMode,
    pub tau_ms: f64,
    /// Explicit leak; wins over `tau_ms`.
    pub leak: Option<f64>,
    pub neuron: NeuronConfig,
    pub max_delay_ms: f64,
    /// Explicit maximum delay in steps; wins over `max_delay_ms`.
    pub d_max: Option<f64>,
    pub delay: DelayConfig,
    pub train: TrainConfig,
    pub train_path: Option<PathBuf>,
    pub eval_path: Option<PathBuf>,
    pub binning: BinningConfig,
    pub synth: SynthConfig,
    pub out_dir: PathBuf,
    /// Every assignment applied, file first then overrides, as given.
    pub assignments: Vec<(String, String)>,
    /// The subset that came from `--set`.
    pub overrides: Vec<(String, String)>,
}

impl Default for RunConfig {
    /// Full-scale speech defaults: three hidden layers of 512, tau 15 ms,
    /// 300 ms maximum delay, 60 epochs at batch 128.
    fn default() -> Self {
        RunConfig {
            seed: 0,
            run_id: "run".into(),
            hidden: vec![512, 512, 512],
            readout: Readout::MeanMembrane,
            dropout: 0.25,
            init_gain: 1.0,
            delay_mode: DelayMode::Dynamic,
            tau_ms: 15.0,
            leak: None,
            neuron: NeuronConfig::default(),
            max_delay_ms: 300.0,
            d_max: None,
            delay: DelayConfig {
                d_max: 30.0,
                ..DelayConfig::default()
            },
            train: TrainConfig {
                epochs: 60,
                batch_size: 128,
                lr_w: 1e-3,
                lr_delay: 1e-1,
                weight_decay: 1e-5,
                ..TrainConfig::default()
            },
            train_path: None,
            eval_path: None,
            binning: BinningConfig::default(),
            synth: SynthConfig::default(),
            out_dir: PathBuf::from("out"),
            assignments: Vec::new(),
            overrides: Vec::new(),
        }
    }
}

impl RunConfig {
    /// Defaults, then `text`, then `overrides`, then derived fields.
    pub fn from_text(text: &str, overrides: &[(String, String)]) -> Result<Self> {
        let mut cfg = RunConfig::default();
        for (line, k, v) in parse_assignments(text)? {
            cfg.set(&k, &v).map_err(|e| match e {
                CadadError::Config(msg) => CadadError::Config(format!("line {line}: {msg}")),
                other => other,
            })?;
        }
        for (k, v) in overrides {
            cfg.set(k, v)?;
            cfg.overrides.push((k.clone(), v.clone()));
        }
        cfg.resolve()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[(String, String)]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CadadError::io(path, e))?;
        Self::from_text(&text, overrides)
    }

    /// Applies one assignment. Unknown keys are rejected by name.
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "run.seed" => self.seed = num(key, v)?,
            "run.id" => {
                if v.is_empty() || v.contains(['/', '\\']) {
                    return Err(CadadError::Config(format!("`{key}`: `{v}` is not a plain name")));
                }
                self.run_id = v.to_string()
            }
            "network.hidden" => {
                self.hidden = if v.is_empty() {
                    Vec::new()
                } else {
                    v.split(',').map(|x| num(key, x.trim())).collect::<Result<_>>()?
                }
            }
            "network.readout" => self.readout = Readout::parse(v)?,
            "network.dropout" => self.dropout = num(key, v)?,
            "network.init_gain" => self.init_gain = num(key, v)?,
            "neuron.tau_ms" => self.tau_ms = num(key, v)?,
            "neuron.leak" => self.leak = Some(num(key, v)?),
            "neuron.v_threshold" => self.neuron.v_threshold = num(key, v)?,
            "neuron.v_reset" => self.neuron.v_reset = num(key, v)?,
            "neuron.surrogate" => {
                self.neuron.surrogate = Surrogate::parse(v)
                    .ok_or_else(|| CadadError::Config(format!("`{key}`: unknown surrogate `{v}`")))?
            }
            "neuron.surrogate_slope" => self.neuron.surrogate_slope = num(key, v)?,
            "neuron.detach_reset" => self.neuron.detach_reset = flag(key, v)?,
            "delay.mode" => self.delay_mode = DelayMode::parse(v)?,
            "delay.max_ms" => self.max_delay_ms = num(key, v)?,
            "delay.d_max" => self.d_max = Some(num(key, v)?),
            "delay.gamma" => self.delay.gamma = num(key, v)?,
            "delay.k_smooth" => self.delay.k_s = num(key, v)?,
            "delay.s_max" => self.delay.s_max = num(key, v)?,
            "delay.s_min" => self.delay.s_min = num(key, v)?,
            "delay.e_decay" => self.delay.e_decay = num(key, v)?,
            "delay.nonlinearity" => self.delay.nonlinearity = Nonlinearity::parse(v)?,
            "delay.shift_grad" => self.delay.shift_grad = flag(key, v)?,
            "train.epochs" => self.train.epochs = num(key, v)?,
            "train.batch_size" => self.train.batch_size = num(key, v)?,
            "train.lr_w" => self.train.lr_w = num(key, v)?,
            "train.lr_delay" => self.train.lr_delay = num(key, v)?,
            "train.weight_decay" => self.train.weight_decay = num(key, v)?,
            "train.eval_every" => self.train.eval_every = num(key, v)?,
            "train.grad_clip" => {
                let c: f64 = num(key, v)?;
                self.train.grad_clip = (c > 0.0).then_some(c);
            }
            "train.warmup_frac" => self.train.onecycle.warmup_frac = num(key, v)?,
            "train.div_start" => self.train.onecycle.start_div = num(key, v)?,
            "train.div_final" => self.train.onecycle.final_div = num(key, v)?,
            "train.eval_discretize" => self.train.eval_discretize = flag(key, v)?,
            "data.train" => self.train_path = opt_path(v),
            "data.eval" => self.eval_path = opt_path(v),
            "data.dt_ms" => self.binning.dt_ms = num(key, v)?,
            "data.steps" => self.binning.steps = num(key, v)?,
            "data.clamp_binary" => self.binning.clamp_binary = flag(key, v)?,
            "synth.classes" => self.synth.n_classes = num(key, v)?,
            "synth.channels" => self.synth.channels = num(key, v)?,
            "synth.max_lag" => self.synth.max_lag = num(key, v)?,
            "synth.group_size" => self.synth.group_size = num(key, v)?,
            "synth.lag_gap" => self.synth.lag_gap = num(key, v)?,
            "synth.jitter" => self.synth.jitter_steps = num(key, v)?,
            "synth.burst_prob" => self.synth.burst_prob = num(key, v)?,
            "synth.burst_participation" => self.synth.burst_participation = num(key, v)?,
            "synth.decoys" => self.synth.decoys = flag(key, v)?,
            "synth.n_train" => self.synth.n_train = num(key, v)?,
            "synth.n_eval" => self.synth.n_eval = num(key, v)?,
            "output.dir" => self.out_dir = PathBuf::from(v),
            _ => return Err(CadadError::Config(format!("unknown config key `{key}`"))),
        }
        self.assignments.push((key.to_string(), v.to_string()));
        Ok(())
    }

    /// Fills derived fields and validates every section.
    fn resolve(&mut self) -> Result<()> {
        let dt = self.binning.dt_ms;
        self.neuron.leak = match self.leak {
            Some(l) => l,
            None => NeuronConfig::leak_from_tau(self.tau_ms, dt)?,
        };
        self.delay.d_max = match self.d_max {
            Some(d) => d,
            None => self.max_delay_ms / dt,
        };
        self.train.seed = self.seed;
        self.synth.seed = self.seed;
        self.synth.dt_ms = dt;
        self.synth.steps = self.binning.steps;
        if self.train_path.is_none() {
            self.binning.channels = self.synth.channels;
        }
        self.neuron.validate()?;
        self.delay.validate()?;
        self.train.validate()?;
        self.binning.validate()?;
        if self.train_path.is_none() {
            self.synth.validate()?;
        }
        if !(self.init_gain > 0.0) {
            return Err(CadadError::Config("network.init_gain must be positive".into()));
        }
        Ok(())
    }

    /// Network shape for `n_in` channels and `n_classes` classes.
    pub fn network_spec(&self, n_in: usize, n_classes: usize) -> Result<NetworkSpec> {
        let spec = NetworkSpec::feedforward(
            n_in,
            &self.hidden,
            n_classes,
            self.delay_mode,
            self.dropout,
            self.readout,
        );
        spec.validate()?;
        Ok(spec)
    }

    /// Output directory, honouring the environment override.
    pub fn output_dir(&self) -> PathBuf {
        match std::env::var_os(OUT_DIR_ENV) {
            Some(d) if !d.is_empty() => PathBuf::from(d),
            _ => self.out_dir.clone(),
        }
    }

    /// Canonical text of every resolved setting, loadable by [`RunConfig::from_text`].
    pub fn to_text(&self) -> String {
        let mut m: BTreeMap<&str, String> = BTreeMap::new();
        let hidden: Vec<String> = self.hidden.iter().map(|h| h.to_string()).collect();
        m.insert("run.seed", self.seed.to_string());
        m.insert("run.id", self.run_id.clone());
        m.insert("network.hidden", hidden.join(","));
        m.insert("network.readout", self.readout.name().into());
        m.insert("network.dropout", self.dropout.to_string());
        m.insert("network.init_gain", self.init_gain.to_string());
        m.insert("neuron.tau_ms", self.tau_ms.to_string());
        m.insert("neuron.leak", self.neuron.leak.to_string());
        m.insert("neuron.v_threshold", self.neuron.v_threshold.to_string());
        m.insert("neuron.v_reset", self.neuron.v_reset.to_string());
        m.insert("neuron.surrogate", self.neuron.surrogate.name().into());
        m.insert("neuron.surrogate_slope", self.neuron.surrogate_slope.to_string());
        m.insert("neuron.detach_reset", self.neuron.detach_reset.to_string());
        m.insert("delay.mode", self.delay_mode.name().into());
        m.insert("delay.max_ms", self.max_delay_ms.to_string());
        m.insert("delay.d_max", self.delay.d_max.to_string());
        m.insert("delay.gamma", self.delay.gamma.to_string());
        m.insert("delay.k_smooth", self.delay.k_s.to_string());
        m.insert("delay.s_max", self.delay.s_max.to_string());
        m.insert("delay.s_min", self.delay.s_min.to_string());
        m.insert("delay.e_decay", self.delay.e_decay.to_string());
        m.insert("delay.nonlinearity", self.delay.nonlinearity.name().into());
        m.insert("delay.shift_grad", self.delay.shift_grad.to_string());
        m.insert("train.epochs", self.train.epochs.to_string());
        m.insert("train.batch_size", self.train.batch_size.to_string());
        m.insert("train.lr_w", self.train.lr_w.to_string());
        m.insert("train.lr_delay", self.train.lr_delay.to_string());
        m.insert("train.weight_decay", self.train.weight_decay.to_string());
        m.insert("train.eval_every", self.train.eval_every.to_string());
        m.insert("train.grad_clip", self.train.grad_clip.unwrap_or(0.0).to_string());
        m.insert("train.warmup_frac", self.train.onecycle.warmup_frac.to_string());
        m.insert("train.div_start", self.train.onecycle.start_div.to_string());
        m.insert("train.div_final", self.train.onecycle.final_div.to_string());
        m.insert("train.eval_discretize", self.train.eval_discretize.to_string());
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        m.insert("data.train", path(&self.train_path));
        m.insert("data.eval", path(&self.eval_path));
        m.insert("data.dt_ms", self.binning.dt_ms.to_string());
        m.insert("data.steps", self.binning.steps.to_string());
        m.insert("data.clamp_binary", self.binning.clamp_binary.to_string());
        m.insert("synth.classes", self.synth.n_classes.to_string());
        m.insert("synth.channels", self.synth.channels.to_string());
        m.insert("synth.max_lag", self.synth.max_lag.to_string());
        m.insert("synth.group_size", self.synth.group_size.to_string());
        m.insert("synth.lag_gap", self.synth.lag_gap.to_string());
        m.insert("synth.jitter", self.synth.jitter_steps.to_string());
        m.insert("synth.burst_prob", self.synth.burst_prob.to_string());
        m.insert("synth.burst_participation", self.synth.burst_participation.to_string());
        m.insert("synth.decoys", self.synth.decoys.to_string());
        m.insert("synth.n_train", self.synth.n_train.to_string());
        m.insert("synth.n_eval", self.synth.n_eval.to_string());
        m.insert("output.dir", self.out_dir.display().to_string());
        debug_assert_eq!(m.len(), SCHEMA.len());
        let mut out = String::new();
        for (k, v) in m {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    /// Run manifest: seed, overrides and the resolved configuration.
    pub fn manifest(&self, command: &str) -> String {
        let mut out = format!("# cadad {command}\n# seed = {}\n", self.seed);
        for (k, v) in &self.overrides {
            let _ = writeln!(out, "# override {k} = {v}");
        }
        out.push_str(&self.to_text());
        out
    }
}
