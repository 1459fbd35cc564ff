use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn cohhgn(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cohhgn"))
        .arg("--data-dir")
        .arg(dir)
        .args(args)
        .env_remove("COHHGN_DATA_DIR")
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = cohhgn(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

const TRAIN: &[&str] = &["train", "--epochs", "2", "--d", "16", "--heads", "2", "--seed", "5"];

/// synth, ingest, build-graphs and a short training run.
fn prepared() -> TempDir {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    ok(d, &["synth", "--sessions", "500", "--items", "20", "--seed", "11"]);
    ok(d, &["ingest", "--min-freq", "5"]);
    ok(d, &["build-graphs"]);
    ok(d, TRAIN);
    tmp
}

#[test]
fn full_pipeline_is_reproducible() {
    let a = prepared();
    let report = ok(a.path(), &["evaluate", "--baselines"]);
    for col in ["P@10", "P@20", "M@10", "M@20"] {
        assert!(report.contains(col), "missing {col} in\n{report}");
    }
    assert!(report.contains("markov") && report.contains("popularity"));

    let b = prepared();
    ok(b.path(), &["evaluate", "--baselines"]);
    for f in ["model.ckpt", "report.json", "metrics.jsonl", "graphs.txt", "sessions.test.jsonl"] {
        let x = std::fs::read(a.path().join(f)).unwrap();
        let y = std::fs::read(b.path().join(f)).unwrap();
        assert!(x == y, "{f} differs between identical runs");
    }

    let manifest: serde_json::Value =
        serde_json::from_slice(&std::fs::read(a.path().join("manifest.json")).unwrap()).unwrap();
    let stages = manifest["stages"].as_object().unwrap();
    for s in ["synth", "ingest", "build-graphs", "train", "evaluate"] {
        assert!(stages.contains_key(s), "manifest lacks {s}");
    }
    assert_eq!(manifest["stages"]["train"]["config"]["d"], 16);
    let outputs = manifest["stages"]["train"]["outputs"].as_array().unwrap();
    assert!(outputs.iter().any(|o| o == "model.ckpt"));
}

#[test]
fn recommend_and_errors() {
    let tmp = prepared();
    let d = tmp.path();

    let out = ok(d, &["recommend", "item_001", "item_002", "--k", "3"]);
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines.len(), 3, "{out}");
    let mut total = 0.0;
    let mut last = f64::INFINITY;
    for l in &lines {
        let (name, p) = l.split_once('\t').unwrap();
        assert!(name.starts_with("item_"));
        let p: f64 = p.parse().unwrap();
        assert!(p <= last);
        last = p;
        total += p;
    }
    assert!(total <= 1.0 + 1e-9);

    let unknown = cohhgn(d, &["recommend", "no_such_item", "--k", "2"]);
    assert!(unknown.status.success());
    assert!(String::from_utf8_lossy(&unknown.stderr).contains("no_such_item"));

    let bad = cohhgn(d, &["train", "--d", "15", "--heads", "2"]);
    assert_eq!(bad.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&bad.stderr).starts_with("error[config]"));

    let missing = cohhgn(d, &["evaluate", "--checkpoint", "absent.ckpt"]);
    assert_eq!(missing.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&missing.stderr).starts_with("error[data]"));

    let k_too_big = cohhgn(d, &["evaluate", "--k", "1000"]);
    assert_eq!(k_too_big.status.code(), Some(2));
}

#[test]
fn train_refuses_mismatched_graphs() {
    let tmp = prepared();
    let out = cohhgn(tmp.path(), &["train", "--epochs", "1", "--d", "16", "--heads", "2", "--epsilon", "3"]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn missing_corpus_is_a_data_error() {
    let tmp = TempDir::new().unwrap();
    let out = cohhgn(tmp.path(), &["ingest"]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn config_file_sits_below_flags() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    let cfg = d.join("run.toml");
    std::fs::write(&cfg, "[synth]\nn_sessions = 300\nn_items = 20\nn_patterns = 20\nseed = 4\n").unwrap();
    let cfg = cfg.to_str().unwrap();

    let from_file = ok(d, &["--config", cfg, "synth"]);
    assert!(from_file.contains("(300 sessions)"), "{from_file}");
    let overridden = ok(d, &["--config", cfg, "synth", "--sessions", "200"]);
    assert!(overridden.contains("(200 sessions)"), "{overridden}");

    std::fs::write(d.join("bad.toml"), "[train]\nno_such_knob = 1\n").unwrap();
    let bad = cohhgn(d, &["--config", d.join("bad.toml").to_str().unwrap(), "synth"]);
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn gradcheck_passes() {
    let tmp = TempDir::new().unwrap();
    let out = ok(tmp.path(), &["gradcheck"]);
    assert!(out.contains("PASS"), "{out}");
}
