use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = "\
run.seed = 3
run.id = tiny
network.hidden = 8
network.dropout = 0
delay.d_max = 6
delay.e_decay = 2
train.epochs = 2
train.batch_size = 8
train.lr_w = 0.01
data.steps = 40
synth.classes = 2
synth.channels = 8
synth.max_lag = 6
synth.n_train = 16
synth.n_eval = 8
";

fn cadad(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cadad"))
        .args(args)
        .env("CADAD_OUT_DIR", out)
        .output()
        .expect("binary runs")
}

fn write_cfg(dir: &Path) -> String {
    let p = dir.join("tiny.cfg");
    fs::write(&p, TINY).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn train_then_eval_and_diagnose() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let cfg = write_cfg(dir.path());
    let o = cadad(&out, &["train", "--config", &cfg, "--set", "delay.mode=dynamic"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let run = out.join("tiny");
    for f in [
        "manifest.cfg",
        "train_log.csv",
        "best.ckpt.json",
        "last.ckpt.json",
        "dynamics.csv",
    ] {
        assert!(run.join(f).exists(), "{f} missing");
    }
    let manifest = fs::read_to_string(run.join("manifest.cfg")).unwrap();
    assert!(manifest.contains("# override delay.mode = dynamic"));
    assert!(manifest.contains("# seed = 3"));
    let log = fs::read_to_string(run.join("train_log.csv")).unwrap();
    assert!(log.starts_with("# cadad train seed=3\nepoch,split,loss,accuracy,s_e"));
    assert_eq!(log.lines().count(), 2 + 4);

    let o = cadad(&out, &["synth-data", "--config", &cfg]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let events = run.join("eval.events");
    let ck = run.join("best.ckpt.json");
    let o = cadad(
        &out,
        &[
            "eval",
            "--checkpoint",
            ck.to_str().unwrap(),
            "--data",
            events.to_str().unwrap(),
            "--steps",
            "40",
        ],
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report = fs::read_to_string(out.join("eval.csv")).unwrap();
    assert!(report.contains("accuracy,"));
    assert_eq!(report.lines().filter(|l| l.matches(',').count() == 2).count(), 1 + 4);

    let o = cadad(
        &out,
        &[
            "diagnose",
            "--checkpoint",
            ck.to_str().unwrap(),
            "--data",
            events.to_str().unwrap(),
            "--steps",
            "40",
            "--run-id",
            "r1",
        ],
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in [
        "r1_all_dynamics.csv",
        "r1_layer0_membrane.csv",
        "r1_layer0_congestion.csv",
        "r1_layer1_membrane.csv",
    ] {
        assert!(out.join(f).exists(), "{f} missing");
    }
}

#[test]
fn same_seed_same_log() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_cfg(dir.path());
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert!(cadad(&a, &["train", "--config", &cfg]).status.success());
    assert!(cadad(&b, &["train", "--config", &cfg]).status.success());
    let la = fs::read(a.join("tiny/train_log.csv")).unwrap();
    let lb = fs::read(b.join("tiny/train_log.csv")).unwrap();
    assert_eq!(la, lb);
}

#[test]
fn bad_key_is_named_and_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let cfg = write_cfg(dir.path());
    let o = cadad(&out, &["train", "--config", &cfg, "--set", "delay.gama=2"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("delay.gama"));

    let bad = dir.path().join("bad.cfg");
    fs::write(&bad, "train.epochz = 3\n").unwrap();
    let o = cadad(&out, &["train", "--config", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("train.epochz"));

    let o = cadad(
        &out,
        &["train", "--config", dir.path().join("missing.cfg").to_str().unwrap()],
    );
    assert_eq!(o.status.code(), Some(4));
    assert!(!out.exists(), "nothing written on failure");
}

#[test]
fn ablate_writes_table() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let cfg = write_cfg(dir.path());
    let o = cadad(&out, &["ablate", "--config", &cfg, "--seeds", "2"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let t = fs::read_to_string(out.join("tiny/ablation.csv")).unwrap();
    assert!(t.contains("method,params,delay_params,accuracy_mean,accuracy_std,runs"));
    for m in ["none,", "static,", "dynamic,"] {
        assert!(t.lines().any(|l| l.starts_with(m)), "{m} row missing");
    }
    let runs = fs::read_to_string(out.join("tiny/ablation_runs.csv")).unwrap();
    assert_eq!(runs.lines().count(), 2 + 6);
}

#[test]
fn gradcheck_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = cadad(&out, &["gradcheck"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stdout));
    assert!(out.join("run/gradcheck.txt").exists());
}
