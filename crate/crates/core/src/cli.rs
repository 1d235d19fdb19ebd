//! Command-line surface of the `cadad` binary.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use log::info;

use crate::checkpoint::Checkpoint;
use crate::config::{parse_override, RunConfig, OUT_DIR_ENV};
use crate::data::{load_event_file, synth_coincidence_task, write_event_file, BinningConfig, Dataset, EventFile};
use crate::delay::DelayMode;
use crate::diagnostics::{dynamics_report, export_congestion_timeseries, export_membrane_traces, export_name};
use crate::error::{CadadError, Result};
use crate::experiment::{ablate, build_network, prepare_data};
use crate::gradcheck;
use crate::network::PassOptions;
use crate::trainer::{evaluate, train};

#[derive(Debug, Parser)]
#[command(
    name = "cadad",
    version,
    about = "Spiking networks with congestion-aware axonal delays"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// Run configuration file; defaults apply when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// `section.key=value`, applied after the file. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Event file to evaluate on.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 10.0)]
    pub dt_ms: f64,
    #[arg(long, default_value_t = 100)]
    pub steps: usize,
    /// Output directory (the environment variable CADAD_OUT_DIR wins).
    #[arg(long, default_value = "out")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train one network and write its log, checkpoints and dynamics report.
    Train(ConfigArgs),
    /// Accuracy and confusion counts of a checkpoint on an event file.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        data: DataArgs,
        /// Keep interpolated delays instead of rounding them.
        #[arg(long)]
        continuous_delays: bool,
    },
    /// Train every delay mode over a set of seeds and tabulate accuracy.
    Ablate {
        #[command(flatten)]
        config: ConfigArgs,
        /// Number of seeds, counting up from run.seed.
        #[arg(long, default_value_t = 5)]
        seeds: u64,
    },
    /// Finite-difference checks of the delay read and full-network gradients.
    Gradcheck {
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Congestion, overflow, membrane and shift exports of a checkpoint.
    Diagnose {
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        data: DataArgs,
        /// Sample index used for the per-sample traces.
        #[arg(long, default_value_t = 0)]
        sample: usize,
        /// Neurons per layer in the membrane traces.
        #[arg(long, default_value_t = 8)]
        top_k: usize,
        #[arg(long, default_value = "diag")]
        run_id: String,
    },
    /// Write the synthetic task as train and eval event files.
    SynthData(ConfigArgs),
}

fn load_config(args: &ConfigArgs) -> Result<RunConfig> {
    let overrides = args.set.iter().map(|s| parse_override(s)).collect::<Result<Vec<_>>>()?;
    match &args.config {
        Some(p) => RunConfig::load(p, &overrides),
        None => RunConfig::from_text("", &overrides),
    }
}

fn out_dir(default: &Path) -> PathBuf {
    match std::env::var_os(OUT_DIR_ENV) {
        Some(d) if !d.is_empty() => PathBuf::from(d),
        _ => default.to_path_buf(),
    }
}

fn write(dir: &Path, name: &str, contents: &str) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| CadadError::io(dir, e))?;
    let p = dir.join(name);
    fs::write(&p, contents).map_err(|e| CadadError::io(&p, e))?;
    info!("wrote {}", p.display());
    Ok(p)
}

/// Seed comment line leading every CSV artifact.
fn header(command: &str, seed: u64) -> String {
    format!("# cadad {command} seed={seed}\n")
}

fn load_data(args: &DataArgs) -> Result<Dataset> {
    let f = load_event_file(&args.data)?;
    let b = BinningConfig {
        dt_ms: args.dt_ms,
        steps: args.steps,
        channels: f.channels,
        clamp_binary: true,
    };
    Dataset::from_streams(&f.streams, f.classes, &b)
}

fn cmd_train(args: &ConfigArgs) -> Result<()> {
    let cfg = load_config(args)?;
    let dir = cfg.output_dir().join(&cfg.run_id);
    write(&dir, "manifest.cfg", &cfg.manifest("train"))?;
    let (tr, ev) = prepare_data(&cfg)?;
    let net = build_network(&cfg, tr.channels(), tr.n_classes, cfg.delay_mode)?;
    let n_layers = net.layers.len();
    let out = train(net, &tr, Some(&ev), &cfg.train, |_| {})?;
    let log = format!("{}{}", header("train", cfg.seed), out.log.to_csv(n_layers));
    write(&dir, "train_log.csv", &log)?;
    write(&dir, "best.ckpt.json", &out.best.to_json()?)?;
    write(&dir, "last.ckpt.json", &out.last.to_json()?)?;
    if let Some(msg) = out.aborted {
        return Err(CadadError::Numeric(format!(
            "training aborted, last good checkpoint kept: {msg}"
        )));
    }
    let net = &out.best.network;
    let rep = dynamics_report(net, &ev, PassOptions::eval(out.best.epoch, cfg.train.eval_discretize))?;
    write(
        &dir,
        "dynamics.csv",
        &format!("{}{}", header("train", cfg.seed), rep.to_csv()),
    )?;
    if let Some(acc) = out.best_accuracy {
        println!("best eval accuracy {acc:.4} at epoch {}", out.best.epoch);
    }
    Ok(())
}

/// Accuracy and `confusion[true][predicted]`.
pub fn confusion(predictions: &[usize], labels: &[usize], n_classes: usize) -> Vec<Vec<usize>> {
    let mut m = vec![vec![0; n_classes]; n_classes];
    for (&p, &l) in predictions.iter().zip(labels) {
        m[l][p] += 1;
    }
    m
}

fn cmd_eval(checkpoint: &Path, data: &DataArgs, continuous: bool) -> Result<()> {
    let ck = Checkpoint::load(checkpoint)?;
    let ds = load_data(data)?;
    let res = evaluate(&ck.network, &ds, PassOptions::eval(ck.epoch, !continuous), 64)?;
    let m = confusion(&res.predictions, &ds.labels, ds.n_classes);
    let mut report = header("eval", ck.seed);
    report.push_str(&format!("accuracy,{}\nloss,{}\n", res.accuracy, res.loss));
    report.push_str("true_class,predicted_class,count\n");
    for (t, row) in m.iter().enumerate() {
        for (p, c) in row.iter().enumerate() {
            report.push_str(&format!("{t},{p},{c}\n"));
        }
    }
    println!("accuracy {:.4} over {} samples", res.accuracy, ds.len());
    for (t, row) in m.iter().enumerate() {
        let cells: Vec<String> = row.iter().map(|c| c.to_string()).collect();
        println!("class {t}: {}", cells.join(" "));
    }
    write(&out_dir(&data.out_dir), "eval.csv", &report)?;
    Ok(())
}

fn cmd_ablate(args: &ConfigArgs, n_seeds: u64) -> Result<()> {
    let cfg = load_config(args)?;
    if n_seeds == 0 {
        return Err(CadadError::Config("--seeds must be at least 1".into()));
    }
    let dir = cfg.output_dir().join(&cfg.run_id);
    write(&dir, "manifest.cfg", &cfg.manifest("ablate"))?;
    let seeds: Vec<u64> = (cfg.seed..cfg.seed + n_seeds).collect();
    let res = ablate(&cfg, &seeds, &DelayMode::ALL)?;
    let h = header("ablate", cfg.seed);
    write(&dir, "ablation.csv", &format!("{h}{}", res.summary_csv()))?;
    write(&dir, "ablation_runs.csv", &format!("{h}{}", res.runs_csv()))?;
    print!("{}", res.summary_csv());
    Ok(())
}

fn cmd_gradcheck(args: &ConfigArgs) -> Result<()> {
    let cfg = load_config(args)?;
    let reports = gradcheck::run_all(cfg.seed)?;
    let mut text = header("gradcheck", cfg.seed);
    let mut ok = true;
    for r in &reports {
        println!("{}", r.summary());
        text.push_str(&r.summary());
        text.push('\n');
        ok &= r.passed();
    }
    write(&cfg.output_dir().join(&cfg.run_id), "gradcheck.txt", &text)?;
    if ok {
        Ok(())
    } else {
        Err(CadadError::Numeric("gradient check failed".into()))
    }
}

fn cmd_diagnose(checkpoint: &Path, data: &DataArgs, sample: usize, top_k: usize, run_id: &str) -> Result<()> {
    let ck = Checkpoint::load(checkpoint)?;
    let ds = load_data(data)?;
    if sample >= ds.len() {
        return Err(CadadError::Index(format!("sample {sample} of {}", ds.len())));
    }
    let dir = out_dir(&data.out_dir);
    let h = header("diagnose", ck.seed);
    let opts = PassOptions::eval(ck.epoch, true);
    let rep = dynamics_report(&ck.network, &ds, opts)?;
    write(
        &dir,
        &export_name(run_id, "all", "dynamics"),
        &format!("{h}{}", rep.to_csv()),
    )?;
    let x = ds.inputs.index_axis(ndarray::Axis(0), sample);
    for (k, l) in ck.network.spec.layers.iter().enumerate() {
        let k_eff = top_k.min(l.n_out);
        let csv = export_membrane_traces(&ck.network, x, k, k_eff, opts)?;
        write(
            &dir,
            &export_name(run_id, &format!("layer{k}"), "membrane"),
            &format!("{h}{csv}"),
        )?;
    }
    for (k, csv) in export_congestion_timeseries(&ck.network, x, opts)? {
        write(
            &dir,
            &export_name(run_id, &format!("layer{k}"), "congestion"),
            &format!("{h}{csv}"),
        )?;
    }
    print!("{}", rep.to_csv());
    Ok(())
}

fn cmd_synth_data(args: &ConfigArgs) -> Result<()> {
    let cfg = load_config(args)?;
    let task = synth_coincidence_task(&cfg.synth)?;
    let dir = cfg.output_dir().join(&cfg.run_id);
    write(&dir, "manifest.cfg", &cfg.manifest("synth-data"))?;
    for (name, streams) in [("train.events", &task.train), ("eval.events", &task.eval)] {
        let f = EventFile {
            channels: cfg.synth.channels,
            classes: cfg.synth.n_classes,
            streams: streams.clone(),
        };
        let p = dir.join(name);
        fs::create_dir_all(&dir).map_err(|e| CadadError::io(&dir, e))?;
        write_event_file(&p, &f)?;
        println!("{} samples -> {}", f.streams.len(), p.display());
    }
    Ok(())
}

/// Runs one parsed command.
pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(a) => cmd_train(&a),
        Command::Eval {
            checkpoint,
            data,
            continuous_delays,
        } => cmd_eval(&checkpoint, &data, continuous_delays),
        Command::Ablate { config, seeds } => cmd_ablate(&config, seeds),
        Command::Gradcheck { config } => cmd_gradcheck(&config),
        Command::Diagnose {
            checkpoint,
            data,
            sample,
            top_k,
            run_id,
        } => cmd_diagnose(&checkpoint, &data, sample, top_k, &run_id),
        Command::SynthData(a) => cmd_synth_data(&a),
    }
}
