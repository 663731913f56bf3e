//! End-to-end checks of the `ccfcnet` binary.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ccfcnet::data::load_dataset;
use ccfcnet::model::load_checkpoint;
use ccfcnet::train::evaluate;

const SMALL: &[(&str, &str)] = &[("--r", "10"), ("--n-per-class", "20"), ("--planted", "8"), ("--seed", "3")];

/// `base` flags with any flag also present in `extra` replaced by its value there.
fn merged<'a>(base: &[(&'a str, &'a str)], extra: &[&'a str]) -> Vec<&'a str> {
    let mut args: Vec<&str> = Vec::new();
    for (flag, value) in base {
        if !extra.contains(flag) {
            args.extend([*flag, *value]);
        }
    }
    args.extend_from_slice(extra);
    args
}

fn ccfcnet(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ccfcnet"))
        .args(args)
        .current_dir(dir)
        .env_remove("CCFCNET_SEED")
        .env("RUST_LOG", "warn")
        .output()
        .expect("spawn ccfcnet")
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = ccfcnet(dir, args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn synth(dir: &Path, out: &str, extra: &[&str]) -> PathBuf {
    let mut args = vec!["synth", "--out", out];
    args.extend(merged(SMALL, extra));
    ok(dir, &args);
    dir.join(out)
}

fn train(dir: &Path, data: &str, out: &str, extra: &[&str]) -> PathBuf {
    let mut args = vec!["train", "--data", data, "--out", out];
    args.extend(merged(&[("--r", "10"), ("--epochs", "3"), ("--d", "10"), ("--n-heads", "2")], extra));
    ok(dir, &args);
    dir.join(out)
}

fn read_tree(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut files = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(p) = stack.pop() {
        if p.is_dir() {
            stack.extend(fs::read_dir(&p).unwrap().map(|e| e.unwrap().path()));
        } else {
            files.push((p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap()));
        }
    }
    files.sort();
    files
}

#[test]
fn synth_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let a = synth(tmp.path(), "a", &[]);
    let b = synth(tmp.path(), "b", &[]);
    let (ta, tb) = (read_tree(&a), read_tree(&b));
    assert!(ta.len() > 40);
    // The recorded config names its own output directory; everything else is byte-identical.
    let strip = |t: Vec<(PathBuf, Vec<u8>)>| -> Vec<_> { t.into_iter().filter(|(p, _)| p != Path::new("resolved_config")).collect() };
    assert_eq!(strip(ta), strip(tb));
    let c = synth(tmp.path(), "c", &["--seed", "4"]);
    assert_ne!(fs::read(a.join("manifest.csv")).unwrap(), fs::read(c.join("manifest.csv")).unwrap());
}

#[test]
fn subtype_column_only_with_subtypes() {
    let tmp = tempfile::tempdir().unwrap();
    let one = synth(tmp.path(), "one", &["--subtypes", "1"]);
    let three = synth(tmp.path(), "three", &["--subtypes", "3", "--planted", "9"]);
    let header = |d: &Path| fs::read_to_string(d.join("manifest.csv")).unwrap().lines().next().unwrap().to_string();
    assert!(!header(&one).contains("subtype"), "{}", header(&one));
    assert!(header(&three).ends_with(",subtype"), "{}", header(&three));
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    fs::write(dir.join("bad.cfg"), "no_such_key = 1\n").unwrap();
    assert_eq!(ccfcnet(dir, &["synth", "--config", "bad.cfg"]).status.code(), Some(2));
    assert_eq!(ccfcnet(dir, &["train", "--data", "missing", "--out", "r"]).status.code(), Some(3));
    assert_eq!(ccfcnet(dir, &["train"]).status.code(), Some(2));
    assert_eq!(ccfcnet(dir, &["synth", "--n-heads", "3", "--d", "10"]).status.code(), Some(0));
    synth(dir, "data", &[]);
    assert_eq!(ccfcnet(dir, &["train", "--data", "data", "--r", "10", "--d", "10", "--n-heads", "3"]).status.code(), Some(2));
    assert_eq!(ccfcnet(dir, &["eval", "--run", "nowhere", "--data", "data"]).status.code(), Some(3));
    assert_ne!(ccfcnet(dir, &["frobnicate"]).status.code(), Some(0));
}

fn parse_metrics(path: &Path) -> Vec<(String, [f64; 4])> {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("split,auc,acc,sen,spc"));
    lines
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            let v = |i: usize| f[i].parse::<f64>().unwrap();
            (f[0].to_string(), [v(1), v(2), v(3), v(4)])
        })
        .collect()
}

#[test]
fn pipeline_matches_library() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    synth(dir, "data", &[]);
    let run = train(dir, "data", "run", &[]);
    for f in ["checkpoint", "epoch_log.csv", "splits.csv", "metrics.csv", "resolved_config"] {
        assert!(run.join(f).exists(), "missing {f}");
    }
    assert_eq!(parse_metrics(&run.join("metrics.csv")).len(), 2);

    ok(dir, &["eval", "--run", "run", "--split", "all"]);
    let cli = parse_metrics(&run.join("eval/metrics.csv"));
    let ck = load_checkpoint(&run.join("checkpoint")).unwrap();
    let ds = load_dataset(&dir.join("data")).unwrap();
    let m = evaluate(&ck.model, &ds).unwrap().metrics;
    assert_eq!(cli, vec![("all".to_string(), [m.auc, m.acc, m.sen, m.spc])]);
    assert_eq!(fs::read_to_string(run.join("eval/predictions.csv")).unwrap().lines().count(), ds.len() + 1);

    ok(dir, &["counter", "--run", "run"]);
    for f in ["counter_metrics.csv", "counter_predictions.csv", "diff_edges.csv", "diff_skipped.csv"] {
        assert!(run.join("counter").join(f).exists(), "missing counter/{f}");
    }

    ok(dir, &["analyze", "--run", "run", "--k", "2"]);
    let analyze = run.join("analyze");
    assert!(analyze.join("mask_stats.csv").exists());
    let before = read_tree(&analyze);
    // Re-running from the recorded configuration reproduces every output.
    ok(dir, &["analyze", "--config", "run/analyze/resolved_config"]);
    assert_eq!(read_tree(&analyze), before);
}

#[test]
fn counter_refuses_prototype_free_model() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    synth(dir, "data", &[]);
    train(dir, "data", "run", &["--ablate", "no_prototype"]);
    let out = ccfcnet(dir, &["counter", "--run", "run"]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
    // Mask statistics do not need prototypes.
    ok(dir, &["analyze", "--run", "run"]);
    assert!(!dir.join("run/analyze/subtypes.csv").exists());
}

#[test]
fn cross_validation_writes_each_fold() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    synth(dir, "data", &[]);
    let run = train(dir, "data", "cv", &["--folds", "3", "--epochs", "2"]);
    for k in 1..=3 {
        assert!(run.join(format!("fold{k}/checkpoint")).exists());
    }
    let summary = fs::read_to_string(run.join("cv_metrics.csv")).unwrap();
    assert_eq!(summary.lines().count(), 1 + 3 + 1, "{summary}");
    assert!(summary.lines().last().unwrap().starts_with("mean,"));
}

#[test]
fn seed_precedence() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let env_seed = Command::new(env!("CARGO_BIN_EXE_ccfcnet"))
        .args(["synth", "--out", "e"])
        .args(merged(&SMALL[..3], &[]))
        .current_dir(dir)
        .env("CCFCNET_SEED", "11")
        .output()
        .unwrap();
    assert!(env_seed.status.success());
    let cfg = fs::read_to_string(dir.join("e/resolved_config")).unwrap();
    assert!(cfg.lines().any(|l| l == "seed = 11"), "{cfg}");
    // An explicit flag beats the environment.
    let flag = Command::new(env!("CARGO_BIN_EXE_ccfcnet"))
        .args(["synth", "--out", "f", "--seed", "12"])
        .args(merged(&SMALL[..3], &[]))
        .current_dir(dir)
        .env("CCFCNET_SEED", "11")
        .output()
        .unwrap();
    assert!(flag.status.success());
    assert!(fs::read_to_string(dir.join("f/resolved_config")).unwrap().lines().any(|l| l == "seed = 12"));
}
