//! The `liga` binary end to end on a tiny configuration.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};

fn liga(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_liga"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn tiny_config() -> Value {
    json!({
        "scenes": {"count": 3, "seed": 5},
        "val_scenes": 2,
        "scene_dir": "scenes",
        "out_dir": "out",
        "train": {"steps": 2, "batch_size": 1},
        "gradcheck": {"points": 2}
    })
}

fn write_config(dir: &Path, name: &str, cfg: &Value) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, serde_json::to_vec_pretty(cfg).unwrap()).unwrap();
    path
}

fn run_ok(args: &[&str]) -> Output {
    let out = liga(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

/// Every file under `dir` with its bytes, sorted by relative path.
fn snapshot(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn commands_are_byte_deterministic() {
    let mut runs = Vec::new();
    for _ in 0..2 {
        let dir = tempfile::tempdir().unwrap();
        let cfg = write_config(dir.path(), "run.json", &tiny_config());
        let c = cfg.to_str().unwrap();
        run_ok(&["gen", "--config", c]);
        run_ok(&["gradcheck", "--config", c]);
        run_ok(&["train", "--config", c, "--imitation", "on"]);
        run_ok(&["eval", "--config", c, "--dump-volume"]);
        runs.push(snapshot(dir.path()));
    }
    assert!(runs[0].iter().any(|(p, _)| p.ends_with("metrics.csv")));
    assert!(runs[0].iter().any(|(p, _)| p.ends_with("ap.csv")));
    assert_eq!(runs[0], runs[1]);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write_config(dir.path(), "bad.json", &json!({"train": {"batch_size": 0}}));
    assert_eq!(liga(&["train", "--config", bad.to_str().unwrap()]).status.code(), Some(1));
    let unknown = write_config(dir.path(), "unknown.json", &json!({"no_such_field": 1}));
    assert_eq!(liga(&["gen", "--config", unknown.to_str().unwrap()]).status.code(), Some(1));
    let missing = dir.path().join("absent.json");
    assert_eq!(liga(&["gen", "--config", missing.to_str().unwrap()]).status.code(), Some(1));

    let mut faulty = tiny_config();
    faulty["gradcheck"]["faults"] = json!(["relu_backward"]);
    let f = write_config(dir.path(), "faulty.json", &faulty);
    let out = liga(&["gradcheck", "--config", f.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));

    let cfg = write_config(dir.path(), "run.json", &tiny_config());
    let out = liga(&["eval", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1), "eval without a checkpoint");
}

fn metrics(dir: &Path, cfg: &Value, imitation: &str) -> String {
    let path = write_config(dir, &format!("{imitation}.json"), cfg);
    let out = dir.join(format!("out_{imitation}"));
    run_ok(&[
        "train",
        "--config",
        path.to_str().unwrap(),
        "--imitation",
        imitation,
        "--out",
        out.to_str().unwrap(),
    ]);
    fs::read_to_string(out.join("metrics.csv")).unwrap()
}

#[test]
fn zero_imitation_weight_equals_imitation_off() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config();
    let c = write_config(dir.path(), "run.json", &cfg);
    run_ok(&["gen", "--config", c.to_str().unwrap()]);
    let off = metrics(dir.path(), &cfg, "off");
    let mut zero = cfg.clone();
    zero["loss_weights"] = json!({"lambda_im": 0.0});
    let on_zero = metrics(dir.path(), &zero, "on");
    assert_eq!(off, on_zero);
    let on = metrics(dir.path(), &cfg, "on");
    assert_ne!(off, on);
}

#[test]
fn zero_steps_logs_initial_losses_only() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny_config();
    cfg["train"]["steps"] = json!(0);
    let c = write_config(dir.path(), "run.json", &cfg);
    run_ok(&["gen", "--config", c.to_str().unwrap()]);
    run_ok(&["train", "--config", c.to_str().unwrap()]);
    let csv = fs::read_to_string(dir.path().join("out/metrics.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2);
    assert!(csv.starts_with("step,"));
}

#[test]
fn empty_validation_set_gives_empty_table() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny_config();
    cfg["val_scenes"] = json!(0);
    cfg["train"]["steps"] = json!(0);
    let c = write_config(dir.path(), "run.json", &cfg);
    let c = c.to_str().unwrap();
    run_ok(&["gen", "--config", c]);
    run_ok(&["train", "--config", c]);
    run_ok(&["eval", "--config", c]);
    let csv = fs::read_to_string(dir.path().join("out/ap.csv")).unwrap();
    assert_eq!(csv, "class,mode,iou_thr,AP\n");
}
