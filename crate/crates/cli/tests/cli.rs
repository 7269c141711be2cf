use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use egp_core::nn::{Activation, Layer, Network};
use egp_core::Tensor;
use serde_json::Value;

fn egp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_egp")).args(args).output().unwrap()
}

fn config(hidden: &str, prune: &str, extra: &str) -> String {
    format!(
        r#"{{
  "name": "cli", "seed": 5,
  "data": {{"kind": "blobs", "num_classes": 3, "dim": 2,
           "train_per_class": 40, "test_per_class": 20, "spread": 0.2}},
  "model": {{"hidden": [{hidden}]}},
  "train": {{"learning_rate": 0.05, "momentum": 0.9, "batch_size": 16, "epochs": 3}},
  "prune": {prune}{extra}
}}"#
    )
}

const HIDDEN: &str = r#"{"kind": "dense", "units": 12}, {"kind": "dense", "units": 8}"#;
const PRUNE: &str = r#"{"zeta": 0.5, "iterations": 2}"#;

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let p = dir.join("config.json");
    fs::write(&p, text).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn train_into(dir: &Path, cfg: &Path) -> PathBuf {
    let out = dir.join("train");
    ok(&egp(&["train", "--config", s(cfg), "--out", s(&out)]));
    out.join("checkpoint.json")
}

#[test]
fn train_writes_a_reloadable_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &config(HIDDEN, PRUNE, ""));
    let out = egp(&["train", "--config", s(&cfg), "--out", s(dir.path())]);
    ok(&out);
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("wrote ") && stdout.contains("checkpoint.json"), "{stdout}");
    let net = Network::load(&dir.path().join("checkpoint.json")).unwrap();
    assert_eq!(net.topology().len(), 3);
    assert_eq!(net.sparsity_pct(), 0.0);
    let rec = json(&dir.path().join("train_record.json"));
    assert_eq!(rec["stage"], "train");
    assert_eq!(rec["train_history"].as_array().unwrap().len(), 3);
}

#[test]
fn out_of_range_zeta_is_a_usage_error_naming_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &config(HIDDEN, r#"{"zeta": 1.5, "iterations": 2}"#, ""));
    let out = egp(&["train", "--config", s(&cfg), "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains("prune.zeta"), "{err}");
    assert!(!dir.path().join("checkpoint.json").exists());
}

#[test]
fn bad_arguments_exit_with_usage_status() {
    assert_eq!(egp(&[]).status.code(), Some(2));
    assert_eq!(egp(&["train"]).status.code(), Some(2));
    assert_eq!(egp(&["prune", "--config", "x", "--mode", "greedy"]).status.code(), Some(2));
    let missing = egp(&["train", "--config", "/nonexistent/config.json"]);
    assert_eq!(missing.status.code(), Some(2));
    assert!(egp(&["--help"]).status.success());
}

#[test]
fn rerun_with_the_same_seed_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &config(HIDDEN, PRUNE, ""));
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        ok(&egp(&["train", "--config", s(&cfg), "--out", s(out), "--seed", "9"]));
    }
    for f in ["checkpoint.json", "train_history.csv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let strip = |p: PathBuf| {
        let mut v = json(&p);
        v.as_object_mut().unwrap().remove("wall_clock_seconds");
        v
    };
    assert_eq!(strip(a.join("train_record.json")), strip(b.join("train_record.json")));
    let c = dir.path().join("c");
    ok(&egp(&["train", "--config", s(&cfg), "--out", s(&c), "--seed", "10"]));
    assert_ne!(fs::read(a.join("checkpoint.json")).unwrap(), fs::read(c.join("checkpoint.json")).unwrap());
}

#[test]
fn two_iterations_reach_75_percent() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &config(HIDDEN, PRUNE, ""));
    let ckpt = train_into(dir.path(), &cfg);
    for mode in ["egp", "vanilla"] {
        let out = dir.path().join(mode);
        ok(&egp(&["prune", "--config", s(&cfg), "--checkpoint", s(&ckpt), "--out", s(&out), "--mode", mode]));
        let rec = json(&out.join("prune_record.json"));
        assert_eq!(rec["sparsity_pct"], 75.0, "{mode}");
        assert_eq!(rec["mode"], mode);
        let log = fs::read_to_string(out.join("prune_log.csv")).unwrap();
        assert!(!log.is_empty());
        let net = Network::load(&out.join("pruned.json")).unwrap();
        assert_eq!(net.metadata["prune_mode"], mode);
        assert_eq!(net.metadata["source_checkpoint"], "checkpoint.json");
    }
}

#[test]
fn oversized_budget_fails_without_writing_anything() {
    let dir = tempfile::tempdir().unwrap();
    // an initial-count base asks for 50% of the original weights every
    // iteration, which the third iteration cannot supply
    let prune = r#"{"zeta": 0.5, "iterations": 3, "budget_base": "initial"}"#;
    let cfg = write_config(dir.path(), &config(HIDDEN, prune, ""));
    let ckpt = train_into(dir.path(), &cfg);
    let out_dir = dir.path().join("pruned");
    let out = egp(&["prune", "--config", s(&cfg), "--checkpoint", s(&ckpt), "--out", s(&out_dir)]);
    assert!(!out.status.success());
    assert_ne!(out.status.code(), Some(101), "panicked");
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.starts_with("error:") && err.contains("budget"), "{err}");
    assert!(!out_dir.exists() || fs::read_dir(&out_dir).unwrap().next().is_none());
}

fn always_on_checkpoint(path: &Path) {
    let w1: Vec<f64> = (0..8).map(|i| 0.37 * i as f64 - 1.13).collect();
    let w2: Vec<f64> = (0..12).map(|i| 0.29 - 0.11 * i as f64).collect();
    let net = Network::new(
        vec![
            Layer::dense(Tensor::new(vec![4, 2], w1).unwrap(), vec![40.1, 40.3, 40.7, 40.9], Activation::Relu).unwrap(),
            Layer::dense(Tensor::new(vec![3, 4], w2).unwrap(), vec![0.3, -0.1, 0.2], Activation::Identity).unwrap(),
        ],
        1,
    )
    .unwrap();
    net.save(path).unwrap();
}

#[test]
fn rejected_reduction_exits_nonzero_and_keeps_the_plan() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &config(HIDDEN, PRUNE, r#", "reduce": {"max_rel_diff": 0.0}"#));
    let ckpt = dir.path().join("on.json");
    always_on_checkpoint(&ckpt);
    let out_dir = dir.path().join("reduced");
    let out = egp(&["reduce", "--config", s(&cfg), "--checkpoint", s(&ckpt), "--out", s(&out_dir)]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains("equivalence check failed"), "{err}");
    let plan = json(&out_dir.join("plan.json"));
    assert_eq!(plan["status"], "rejected");
    assert_eq!(plan["layers_removed_count"], 1);
    assert!(plan["verification"]["max_rel_diff"].as_f64().unwrap() > 0.0);
    assert!(!out_dir.join("reduced.json").exists());

    // the default tolerance accepts the same plan
    let cfg = write_config(dir.path(), &config(HIDDEN, PRUNE, ""));
    let out = egp(&["reduce", "--config", s(&cfg), "--checkpoint", s(&ckpt), "--out", s(&out_dir)]);
    ok(&out);
    assert!(String::from_utf8(out.stdout).unwrap().contains("layers removed: 1/1"));
    let reduced = Network::load(&out_dir.join("reduced.json")).unwrap();
    assert_eq!(reduced.layers.len(), 1);
    assert_eq!(json(&out_dir.join("plan.json"))["status"], "accepted");
}

#[test]
fn report_over_one_record_has_one_row() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &config(HIDDEN, PRUNE, ""));
    train_into(dir.path(), &cfg);
    let rep = dir.path().join("report");
    let record = dir.path().join("train/train_record.json");
    ok(&egp(&["report", s(&record), "--out", s(&rep)]));
    let csv = fs::read_to_string(rep.join("results.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2, "{csv}");
    assert!(rep.join("states.svg").exists());
    assert!(!rep.join("ablation.csv").exists());
}

#[test]
fn scratch_handles_a_network_without_hidden_layers() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &config("", PRUNE, ""));
    let ckpt = train_into(dir.path(), &cfg);
    let out_dir = dir.path().join("scratch");
    ok(&egp(&["scratch", "--config", s(&cfg), "--checkpoint", s(&ckpt), "--out", s(&out_dir)]));
    let net = Network::load(&out_dir.join("scratch.json")).unwrap();
    assert_eq!(net.topology().len(), 1);
    let rec = json(&out_dir.join("scratch_record.json"));
    assert_eq!(rec["stage"], "scratch");
    assert_eq!(rec["model"], "2-3");
}

#[test]
fn analyze_exports_entropy_tables() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &config(HIDDEN, PRUNE, ""));
    let ckpt = train_into(dir.path(), &cfg);
    let out_dir = dir.path().join("analyze");
    ok(&egp(&["analyze", "--config", s(&cfg), "--checkpoint", s(&ckpt), "--out", s(&out_dir)]));
    let layers = fs::read_to_string(out_dir.join("entropy_layers.csv")).unwrap();
    assert_eq!(layers.lines().count(), 3, "{layers}");
    let neurons = fs::read_to_string(out_dir.join("entropy_neurons.csv")).unwrap();
    assert_eq!(neurons.lines().count(), 1 + 12 + 8);
}
