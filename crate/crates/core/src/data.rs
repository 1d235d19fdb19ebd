//! Spike-event ingestion and the synthetic coincidence task.
//!
//! Event files are UTF-8 text:
//!
//! ```text
//! # events v1 channels=<C> classes=<K>
//! sample <id> label <k> duration_ms <d>
//! <time_ms> <channel>
//! ...
//! <blank line>
//! ```
//!
//! Times carry at most three fractional digits and are handled internally
//! as integer microsecond ticks, so binning is exact.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use log::warn;
use ndarray::{Array2, Array3, Axis};
use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{CadadError, Result};
use crate::seed;

/// One spike.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Event {
    pub time_ms: f64,
    pub channel: usize,
}

/// A labelled recording.
#[derive(Debug, Clone, PartialEq)]
pub struct EventStream {
    pub id: u64,
    pub label: usize,
    pub duration_ms: f64,
    /// Sorted by time.
    pub events: Vec<Event>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BinningConfig {
    pub dt_ms: f64,
    pub steps: usize,
    pub channels: usize,
    /// Frames hold 0/1 instead of per-bin counts.
    pub clamp_binary: bool,
}

impl Default for BinningConfig {
    fn default() -> Self {
        BinningConfig {
            dt_ms: 10.0,
            steps: 100,
            channels: 32,
            clamp_binary: true,
        }
    }
}

fn ticks(ms: f64) -> i64 {
    (ms * 1000.0).round() as i64
}

impl BinningConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt_ms > 0.0) || ticks(self.dt_ms) <= 0 {
            return Err(CadadError::Config(format!(
                "data.dt_ms must be at least 0.001, got {}",
                self.dt_ms
            )));
        }
        if (self.dt_ms * 1000.0 - ticks(self.dt_ms) as f64).abs() > 1e-6 {
            return Err(CadadError::Config(format!(
                "data.dt_ms must be a multiple of 0.001 ms, got {}",
                self.dt_ms
            )));
        }
        if self.steps == 0 || self.channels == 0 {
            return Err(CadadError::Config(
                "data.steps and data.channels must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Bins a stream into a `[T x C]` frame. Events at or after `T * dt` are dropped.
pub fn bin_events(stream: &EventStream, cfg: &BinningConfig) -> Result<Array2<f64>> {
    cfg.validate()?;
    let dt = ticks(cfg.dt_ms);
    let mut frame = Array2::zeros((cfg.steps, cfg.channels));
    for ev in &stream.events {
        if ev.channel >= cfg.channels {
            return Err(CadadError::Index(format!(
                "sample {}: channel {} with {} channels",
                stream.id, ev.channel, cfg.channels
            )));
        }
        let t = ticks(ev.time_ms);
        if t < 0 {
            return Err(CadadError::Contract(format!(
                "sample {}: negative event time {}",
                stream.id, ev.time_ms
            )));
        }
        let bin = (t / dt) as usize;
        if bin >= cfg.steps {
            continue;
        }
        let cell = &mut frame[[bin, ev.channel]];
        *cell = if cfg.clamp_binary { 1.0 } else { *cell + 1.0 };
    }
    Ok(frame)
}

/// Contents of an event file.
#[derive(Debug, Clone, PartialEq)]
pub struct EventFile {
    pub channels: usize,
    pub classes: usize,
    pub streams: Vec<EventStream>,
}

fn parse_err(line: usize, msg: impl Into<String>) -> CadadError {
    CadadError::Parse { line, msg: msg.into() }
}

fn parse_time(s: &str, line: usize) -> Result<f64> {
    let (whole, frac) = match s.split_once('.') {
        Some((w, f)) => (w, f),
        None => (s, ""),
    };
    let digits_ok = !whole.is_empty()
        && whole.bytes().all(|b| b.is_ascii_digit())
        && frac.len() <= 3
        && frac.bytes().all(|b| b.is_ascii_digit())
        && !(s.contains('.') && frac.is_empty());
    if !digits_ok {
        return Err(parse_err(
            line,
            format!("bad time '{s}' (non-negative decimal, at most 3 fractional digits)"),
        ));
    }
    s.parse::<f64>()
        .map_err(|e| parse_err(line, format!("bad time '{s}': {e}")))
}

/// Parses event-file text.
pub fn parse_events(text: &str) -> Result<EventFile> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let (_, header) = lines.next().ok_or_else(|| parse_err(1, "empty file"))?;
    let mut channels = None;
    let mut classes = None;
    let mut parts = header.split_whitespace();
    if parts.next() != Some("#") || parts.next() != Some("events") || parts.next() != Some("v1") {
        return Err(parse_err(1, "expected header '# events v1 channels=<C> classes=<K>'"));
    }
    for p in parts {
        match p.split_once('=') {
            Some(("channels", v)) => channels = v.parse::<usize>().ok(),
            Some(("classes", v)) => classes = v.parse::<usize>().ok(),
            _ => return Err(parse_err(1, format!("unexpected header field '{p}'"))),
        }
    }
    let (channels, classes) = match (channels, classes) {
        (Some(c), Some(k)) if c > 0 && k > 0 => (c, k),
        _ => return Err(parse_err(1, "header needs positive channels= and classes=")),
    };

    let mut streams: Vec<EventStream> = Vec::new();
    let mut current: Option<EventStream> = None;
    let mut ids = BTreeSet::new();
    for (no, raw) in lines {
        let line = raw.trim();
        if line.is_empty() {
            if let Some(s) = current.take() {
                streams.push(finish_stream(s));
            }
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        match current.as_mut() {
            None => {
                if fields.len() != 6 || fields[0] != "sample" || fields[2] != "label" || fields[4] != "duration_ms" {
                    return Err(parse_err(no, "expected 'sample <id> label <k> duration_ms <d>'"));
                }
                let id: u64 = fields[1]
                    .parse()
                    .map_err(|_| parse_err(no, format!("bad sample id '{}'", fields[1])))?;
                let label: usize = fields[3]
                    .parse()
                    .map_err(|_| parse_err(no, format!("bad label '{}'", fields[3])))?;
                if label >= classes {
                    return Err(parse_err(no, format!("label {label} with {classes} classes")));
                }
                let duration_ms = parse_time(fields[5], no)?;
                if !(duration_ms > 0.0) {
                    return Err(parse_err(no, "duration_ms must be positive"));
                }
                if !ids.insert(id) {
                    return Err(parse_err(no, format!("duplicate sample id {id}")));
                }
                current = Some(EventStream {
                    id,
                    label,
                    duration_ms,
                    events: Vec::new(),
                });
            }
            Some(s) => {
                if fields.len() != 2 {
                    return Err(parse_err(no, "expected '<time_ms> <channel>'"));
                }
                let time_ms = parse_time(fields[0], no)?;
                let channel: usize = fields[1]
                    .parse()
                    .map_err(|_| parse_err(no, format!("bad channel '{}'", fields[1])))?;
                if channel >= channels {
                    return Err(parse_err(no, format!("channel {channel} with {channels} channels")));
                }
                s.events.push(Event { time_ms, channel });
            }
        }
    }
    if let Some(s) = current.take() {
        streams.push(finish_stream(s));
    }
    Ok(EventFile {
        channels,
        classes,
        streams,
    })
}

fn finish_stream(mut s: EventStream) -> EventStream {
    let sorted = s.events.windows(2).all(|w| w[0].time_ms <= w[1].time_ms);
    if !sorted {
        warn!("sample {}: events not sorted by time, sorting", s.id);
        s.events
            .sort_by(|a, b| a.time_ms.total_cmp(&b.time_ms).then(a.channel.cmp(&b.channel)));
    }
    s
}

pub fn load_event_file(path: &Path) -> Result<EventFile> {
    let text = std::fs::read_to_string(path).map_err(|e| CadadError::io(path, e))?;
    parse_events(&text)
}

fn fmt_time(ms: f64) -> String {
    let t = ticks(ms);
    format!("{}.{:03}", t / 1000, t % 1000)
}

/// Serialises streams in the event-file format.
pub fn format_events(file: &EventFile) -> String {
    let mut out = format!("# events v1 channels={} classes={}\n", file.channels, file.classes);
    for s in &file.streams {
        let _ = writeln!(
            out,
            "sample {} label {} duration_ms {}",
            s.id,
            s.label,
            fmt_time(s.duration_ms)
        );
        for e in &s.events {
            let _ = writeln!(out, "{} {}", fmt_time(e.time_ms), e.channel);
        }
        out.push('\n');
    }
    out
}

pub fn write_event_file(path: &Path, file: &EventFile) -> Result<()> {
    std::fs::write(path, format_events(file)).map_err(|e| CadadError::io(path, e))
}

/// Binned, labelled samples.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// `[sample, time, channel]`
    pub inputs: Array3<f64>,
    pub labels: Vec<usize>,
    pub ids: Vec<u64>,
    pub n_classes: usize,
}

impl Dataset {
    pub fn from_streams(streams: &[EventStream], n_classes: usize, cfg: &BinningConfig) -> Result<Self> {
        let mut inputs = Array3::zeros((streams.len(), cfg.steps, cfg.channels));
        for (i, s) in streams.iter().enumerate() {
            let frame = bin_events(s, cfg)?;
            inputs.index_axis_mut(Axis(0), i).assign(&frame);
        }
        Ok(Dataset {
            inputs,
            labels: streams.iter().map(|s| s.label).collect(),
            ids: streams.iter().map(|s| s.id).collect(),
            n_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn steps(&self) -> usize {
        self.inputs.dim().1
    }

    pub fn channels(&self) -> usize {
        self.inputs.dim().2
    }

    /// Samples at `idx`, in that order.
    pub fn select(&self, idx: &[usize]) -> Dataset {
        Dataset {
            inputs: self.inputs.select(Axis(0), idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            ids: idx.iter().map(|&i| self.ids[i]).collect(),
            n_classes: self.n_classes,
        }
    }

    /// First `n` samples (or all of them).
    pub fn head(&self, n: usize) -> Dataset {
        let idx: Vec<usize> = (0..n.min(self.len())).collect();
        self.select(&idx)
    }
}

/// Parameters of the synthetic temporal-coincidence task.
///
/// Channels are split into disjoint signature groups, one per class. Each
/// class fixes a random lag per channel of its group; a sample of class `k`
/// fires every channel of group `k` once at `anchor + lag + jitter`, where
/// the anchor is drawn per sample so absolute timing carries no class
/// information. With `decoys` set, every channel outside the group fires
/// once at a uniformly random step, so spike counts carry none either.
/// Background bursts hit each step with probability `burst_prob`; a burst
/// fires each channel independently with probability `burst_participation`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthConfig {
    pub n_classes: usize,
    pub channels: usize,
    pub steps: usize,
    pub max_lag: usize,
    /// Signature channels per class; 0 splits all channels evenly.
    pub group_size: usize,
    /// Minimum distance between any two lags of one signature.
    pub lag_gap: usize,
    pub jitter_steps: usize,
    pub burst_prob: f64,
    pub burst_participation: f64,
    pub decoys: bool,
    pub n_train: usize,
    pub n_eval: usize,
    pub dt_ms: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_classes: 4,
            channels: 32,
            steps: 100,
            max_lag: 20,
            group_size: 0,
            lag_gap: 1,
            jitter_steps: 2,
            burst_prob: 0.2,
            burst_participation: 0.5,
            decoys: true,
            n_train: 256,
            n_eval: 128,
            dt_ms: 10.0,
            seed: 0,
        }
    }
}

/// Class signatures of a synthetic task.
#[derive(Debug, Clone, PartialEq)]
pub struct Signatures {
    /// Channels owned by each class.
    pub groups: Vec<Vec<usize>>,
    /// Lag (in steps) of each channel of each group.
    pub lags: Vec<Vec<usize>>,
}

/// Synthetic train and eval streams.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthTask {
    pub config: SynthConfig,
    pub signatures: Signatures,
    pub train: Vec<EventStream>,
    pub eval: Vec<EventStream>,
}

impl SynthTask {
    pub fn binning(&self) -> BinningConfig {
        BinningConfig {
            dt_ms: self.config.dt_ms,
            steps: self.config.steps,
            channels: self.config.channels,
            clamp_binary: true,
        }
    }

    pub fn datasets(&self) -> Result<(Dataset, Dataset)> {
        let b = self.binning();
        Ok((
            Dataset::from_streams(&self.train, self.config.n_classes, &b)?,
            Dataset::from_streams(&self.eval, self.config.n_classes, &b)?,
        ))
    }
}

impl SynthConfig {
    pub fn signature_size(&self) -> usize {
        if self.group_size == 0 {
            self.channels / self.n_classes
        } else {
            self.group_size
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_classes < 2 {
            return Err(CadadError::Config("synth: need at least 2 classes".into()));
        }
        if self.channels < 2 * self.n_classes {
            return Err(CadadError::Config(format!(
                "synth: {} channels cannot hold {} signature groups of at least 2",
                self.channels, self.n_classes
            )));
        }
        let g = self.signature_size();
        if g < 2 || g * self.n_classes > self.channels {
            return Err(CadadError::Config(format!(
                "synth: {} classes of {g} signature channels do not fit in {} channels",
                self.n_classes, self.channels
            )));
        }
        if self.lag_gap == 0 || (g - 1) * self.lag_gap > self.max_lag {
            return Err(CadadError::Config(format!(
                "synth: {g} lags spaced by {} exceed max_lag {}",
                self.lag_gap, self.max_lag
            )));
        }
        if self.steps <= self.max_lag + self.jitter_steps {
            return Err(CadadError::Config(format!(
                "synth: {} steps leave no room for lag {} plus jitter {}",
                self.steps, self.max_lag, self.jitter_steps
            )));
        }
        if !(0.0..=1.0).contains(&self.burst_prob) || !(0.0..=1.0).contains(&self.burst_participation) {
            return Err(CadadError::Config("synth: probabilities must lie in [0, 1]".into()));
        }
        if self.n_train == 0 {
            return Err(CadadError::Config("synth: n_train must be positive".into()));
        }
        Ok(())
    }
}

fn draw_signatures(cfg: &SynthConfig, rng: &mut impl Rng) -> Signatures {
    let group_size = cfg.signature_size();
    let mut perm: Vec<usize> = (0..cfg.channels).collect();
    perm.shuffle(rng);
    let mut groups = Vec::with_capacity(cfg.n_classes);
    let mut lags = Vec::with_capacity(cfg.n_classes);
    // sorted distinct picks from the slack range, spread apart by the gap
    let slack = cfg.max_lag - (group_size - 1) * cfg.lag_gap;
    for k in 0..cfg.n_classes {
        let mut g: Vec<usize> = perm[k * group_size..(k + 1) * group_size].to_vec();
        g.sort_unstable();
        // lags must spread over at least half the range so the group is
        // not already coincident without delays
        let l = loop {
            let mut picks: Vec<usize> = (0..group_size).map(|_| rng.gen_range(0..=slack)).collect();
            picks.sort_unstable();
            let mut cand: Vec<usize> = picks.iter().enumerate().map(|(i, p)| p + i * cfg.lag_gap).collect();
            cand.shuffle(rng);
            let spread = cand.iter().max().unwrap() - cand.iter().min().unwrap();
            if cfg.max_lag == 0 || 2 * spread >= cfg.max_lag {
                break cand;
            }
        };
        groups.push(g);
        lags.push(l);
    }
    let mut seen = BTreeSet::new();
    for g in &groups {
        for &c in g {
            assert!(seen.insert(c), "signature groups overlap on channel {c}");
        }
    }
    Signatures { groups, lags }
}

fn draw_sample(cfg: &SynthConfig, sig: &Signatures, id: u64, label: usize, rng: &mut impl Rng) -> EventStream {
    let mut cells: BTreeSet<(usize, usize)> = BTreeSet::new();
    let anchor_hi = cfg.steps - 1 - cfg.max_lag - cfg.jitter_steps;
    let anchor = rng.gen_range(0..=anchor_hi);
    for (&c, &lag) in sig.groups[label].iter().zip(&sig.lags[label]) {
        let jitter = rng.gen_range(0..=cfg.jitter_steps);
        cells.insert((anchor + lag + jitter, c));
    }
    if cfg.decoys {
        let own: BTreeSet<usize> = sig.groups[label].iter().copied().collect();
        for c in (0..cfg.channels).filter(|c| !own.contains(c)) {
            cells.insert((rng.gen_range(0..cfg.steps), c));
        }
    }
    for t in 0..cfg.steps {
        if rng.gen::<f64>() < cfg.burst_prob {
            for c in 0..cfg.channels {
                if rng.gen::<f64>() < cfg.burst_participation {
                    cells.insert((t, c));
                }
            }
        }
    }
    let events = cells
        .into_iter()
        .map(|(t, c)| Event {
            time_ms: t as f64 * cfg.dt_ms,
            channel: c,
        })
        .collect();
    EventStream {
        id,
        label,
        duration_ms: cfg.steps as f64 * cfg.dt_ms,
        events,
    }
}

/// Generates the task. Each sample draws from its own derived seed.
pub fn synth_coincidence_task(cfg: &SynthConfig) -> Result<SynthTask> {
    cfg.validate()?;
    let mut rng = seed::rng(seed::derive(cfg.seed, "synth.signatures"));
    let signatures = draw_signatures(cfg, &mut rng);
    let sample_root = seed::derive(cfg.seed, "synth.samples");
    let label_root = seed::derive(cfg.seed, "synth.labels");
    let make = |offset: u64, n: usize| -> Vec<EventStream> {
        // balanced labels, shuffled
        let mut labels: Vec<usize> = (0..n).map(|i| i % cfg.n_classes).collect();
        labels.shuffle(&mut seed::rng(seed::derive_indexed(label_root, offset)));
        labels
            .iter()
            .enumerate()
            .map(|(i, &label)| {
                let id = offset + i as u64;
                let mut r = seed::rng(seed::derive_indexed(sample_root, id));
                draw_sample(cfg, &signatures, id, label, &mut r)
            })
            .collect()
    };
    let train = make(0, cfg.n_train);
    let eval = make(cfg.n_train as u64, cfg.n_eval);
    Ok(SynthTask {
        config: *cfg,
        signatures,
        train,
        eval,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stream(events: &[(f64, usize)]) -> EventStream {
        EventStream {
            id: 0,
            label: 0,
            duration_ms: 100.0,
            events: events
                .iter()
                .map(|&(time_ms, channel)| Event { time_ms, channel })
                .collect(),
        }
    }

    fn cfg(steps: usize, channels: usize) -> BinningConfig {
        BinningConfig {
            dt_ms: 10.0,
            steps,
            channels,
            clamp_binary: true,
        }
    }

    #[test]
    fn binning_examples() {
        let empty = bin_events(&stream(&[]), &cfg(5, 2)).unwrap();
        assert!(empty.iter().all(|&v| v == 0.0));
        let one = bin_events(&stream(&[(15.0, 1)]), &cfg(5, 2)).unwrap();
        assert_eq!(one[[1, 1]], 1.0);
        assert_eq!(one.sum(), 1.0);
        let two = bin_events(&stream(&[(11.0, 0), (19.999, 0)]), &cfg(5, 2)).unwrap();
        assert_eq!(two[[1, 0]], 1.0);
        let mut counts = cfg(5, 2);
        counts.clamp_binary = false;
        let two = bin_events(&stream(&[(11.0, 0), (19.999, 0)]), &counts).unwrap();
        assert_eq!(two[[1, 0]], 2.0);
    }

    #[test]
    fn binning_is_exact_on_decimal_edges() {
        let b = BinningConfig {
            dt_ms: 0.1,
            steps: 10,
            channels: 1,
            clamp_binary: true,
        };
        // 0.3 / 0.1 is 2.9999999999999996 in floating point
        let f = bin_events(&stream(&[(0.3, 0)]), &b).unwrap();
        assert_eq!(f[[3, 0]], 1.0);
    }

    #[test]
    fn binning_drops_trailing_and_rejects_channels() {
        let f = bin_events(&stream(&[(50.0, 0)]), &cfg(5, 1)).unwrap();
        assert_eq!(f.sum(), 0.0);
        let err = bin_events(&stream(&[(5.0, 3)]), &cfg(5, 2));
        assert!(matches!(err, Err(CadadError::Index(_))));
    }

    #[test]
    fn rebinning_grid_events_is_idempotent() {
        let s = stream(&[(0.0, 0), (20.0, 1), (20.0, 0), (40.0, 1)]);
        let f = bin_events(&s, &cfg(5, 2)).unwrap();
        let mut evs = Vec::new();
        for ((t, c), &v) in f.indexed_iter() {
            if v > 0.0 {
                evs.push((t as f64 * 10.0, c));
            }
        }
        assert_eq!(bin_events(&stream(&evs), &cfg(5, 2)).unwrap(), f);
    }

    const SAMPLE_FILE: &str = "# events v1 channels=3 classes=2\n\
sample 7 label 1 duration_ms 50.5\n\
0.000 2\n\
12.125 0\n\
\n\
sample 9 label 0 duration_ms 20\n\
5.5 1\n\
1 0\n";

    #[test]
    fn parse_and_sort() {
        let f = parse_events(SAMPLE_FILE).unwrap();
        assert_eq!((f.channels, f.classes), (3, 2));
        assert_eq!(f.streams.len(), 2);
        assert_eq!(
            f.streams[0].events[1],
            Event {
                time_ms: 12.125,
                channel: 0
            }
        );
        assert_eq!(f.streams[1].events[0].time_ms, 1.0);
        assert_eq!(f.streams[0].duration_ms, 50.5);
        let again = parse_events(&format_events(&f)).unwrap();
        assert_eq!(again, f);
    }

    #[test]
    fn parse_errors_name_line() {
        let bad = SAMPLE_FILE.replace("12.125 0", "12.1255 0");
        match parse_events(&bad) {
            Err(CadadError::Parse { line, .. }) => assert_eq!(line, 4),
            other => panic!("{other:?}"),
        }
        let bad = SAMPLE_FILE.replace("0.000 2", "0.000 3");
        assert!(matches!(parse_events(&bad), Err(CadadError::Parse { line: 3, .. })));
        let bad = SAMPLE_FILE.replace("label 1", "label 2");
        assert!(matches!(parse_events(&bad), Err(CadadError::Parse { line: 2, .. })));
        assert!(matches!(
            parse_events("# events v2\n"),
            Err(CadadError::Parse { line: 1, .. })
        ));
        let bad = SAMPLE_FILE.replace("5.5 1", "-5.5 1");
        assert!(matches!(parse_events(&bad), Err(CadadError::Parse { line: 7, .. })));
    }

    #[test]
    fn synth_is_deterministic_and_balanced() {
        let c = SynthConfig {
            n_train: 40,
            n_eval: 20,
            ..SynthConfig::default()
        };
        let a = synth_coincidence_task(&c).unwrap();
        let b = synth_coincidence_task(&c).unwrap();
        assert_eq!(a, b);
        for k in 0..c.n_classes {
            assert_eq!(a.train.iter().filter(|s| s.label == k).count(), 10);
        }
        let train_ids: BTreeSet<u64> = a.train.iter().map(|s| s.id).collect();
        assert!(a.eval.iter().all(|s| !train_ids.contains(&s.id)));
        let other = synth_coincidence_task(&SynthConfig { seed: 1, ..c }).unwrap();
        assert_ne!(a.train, other.train);
    }

    #[test]
    fn synth_signature_placement() {
        let c = SynthConfig {
            jitter_steps: 0,
            burst_prob: 0.0,
            decoys: false,
            n_train: 8,
            n_eval: 0,
            ..SynthConfig::default()
        };
        let task = synth_coincidence_task(&c).unwrap();
        for s in &task.train {
            let g = &task.signatures.groups[s.label];
            let l = &task.signatures.lags[s.label];
            assert_eq!(s.events.len(), g.len());
            // all (time - lag) equal: one shared anchor
            let anchors: BTreeSet<i64> = s
                .events
                .iter()
                .map(|e| {
                    let pos = g.iter().position(|&c| c == e.channel).unwrap();
                    (e.time_ms / c.dt_ms) as i64 - l[pos] as i64
                })
                .collect();
            assert_eq!(anchors.len(), 1);
        }
    }

    #[test]
    fn synth_lags_respect_gap() {
        let c = SynthConfig {
            group_size: 5,
            lag_gap: 4,
            n_train: 4,
            n_eval: 0,
            ..SynthConfig::default()
        };
        let task = synth_coincidence_task(&c).unwrap();
        for (g, l) in task.signatures.groups.iter().zip(&task.signatures.lags) {
            assert_eq!(g.len(), 5);
            let mut s = l.clone();
            s.sort_unstable();
            assert!(s.windows(2).all(|w| w[1] - w[0] >= 4), "{s:?}");
            assert!(*s.last().unwrap() <= c.max_lag);
        }
    }

    #[test]
    fn synth_bursts_fill_channels() {
        let c = SynthConfig {
            burst_prob: 0.3,
            burst_participation: 0.5,
            decoys: false,
            n_train: 64,
            n_eval: 0,
            ..SynthConfig::default()
        };
        let (train, _) = synth_coincidence_task(&c).unwrap().datasets().unwrap();
        // fraction of steps where at least a third of the channels fire
        let mut burst_steps = 0;
        let mut high = 0.0;
        for b in 0..train.len() {
            for t in 0..c.steps {
                let frac = train.inputs.slice(ndarray::s![b, t, ..]).sum() / c.channels as f64;
                if frac > 0.3 {
                    burst_steps += 1;
                    high += frac;
                }
            }
        }
        let rate = burst_steps as f64 / (train.len() * c.steps) as f64;
        assert!((rate - 0.3).abs() < 0.03, "burst rate {rate}");
        let mean = high / burst_steps as f64;
        assert!((mean - 0.5).abs() < 0.05, "participation {mean}");
    }

    #[test]
    fn synth_rejects_bad_geometry() {
        let c = SynthConfig {
            channels: 5,
            n_classes: 3,
            ..SynthConfig::default()
        };
        assert!(matches!(synth_coincidence_task(&c), Err(CadadError::Config(_))));
        let c = SynthConfig {
            steps: 20,
            ..SynthConfig::default()
        };
        assert!(synth_coincidence_task(&c).is_err());
        let c = SynthConfig {
            group_size: 6,
            lag_gap: 5,
            ..SynthConfig::default()
        };
        assert!(synth_coincidence_task(&c).is_err());
    }

    #[test]
    fn file_roundtrip_through_disk() {
        let task = synth_coincidence_task(&SynthConfig {
            n_train: 6,
            n_eval: 2,
            ..SynthConfig::default()
        })
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("train.events");
        let f = EventFile {
            channels: 32,
            classes: 4,
            streams: task.train.clone(),
        };
        write_event_file(&p, &f).unwrap();
        let back = load_event_file(&p).unwrap();
        assert_eq!(back, f);
        let b = task.binning();
        let d1 = Dataset::from_streams(&task.train, 4, &b).unwrap();
        let d2 = Dataset::from_streams(&back.streams, 4, &b).unwrap();
        assert_eq!(d1, d2);
    }
}
