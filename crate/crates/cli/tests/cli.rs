use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn adbcr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_adbcr"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = adbcr(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn generated(dir: &TempDir, name: &str, seed: &str) -> PathBuf {
    let out = dir.path().join(name);
    ok(&["generate", "--n", "240", "--d", "4", "--seed", seed, "--out", p(&out)]);
    out.join("data.csv")
}

const SMALL: [&str; 8] = [
    "--set",
    "shared_layers=8",
    "--set",
    "head_layers=6",
    "--set",
    "max_epochs=4",
    "--set",
    "batch_size=60",
];

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn generate_is_byte_reproducible() {
    let dir = TempDir::new().unwrap();
    let a = generated(&dir, "a", "5");
    let b = generated(&dir, "b", "5");
    let c = generated(&dir, "c", "6");
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    assert_eq!(
        fs::read(a.with_file_name("truth.txt")).unwrap(),
        fs::read(b.with_file_name("truth.txt")).unwrap()
    );
    assert_ne!(fs::read(&a).unwrap(), fs::read(&c).unwrap());
    let manifest = json(&a.with_file_name("manifest.json"));
    assert_eq!(manifest["command"], "generate");
    assert_eq!(manifest["seed"], 5);
    assert_eq!(manifest["outputs"].as_array().unwrap().len(), 2);
}

#[test]
fn too_few_rows_is_a_usage_error() {
    let dir = TempDir::new().unwrap();
    let out = adbcr(&["generate", "--n", "20", "--out", p(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("minimum of 50"));
    assert!(!dir.path().join("data.csv").exists());
}

#[test]
fn unknown_flags_and_modes_are_rejected() {
    let dir = TempDir::new().unwrap();
    assert_eq!(adbcr(&["train", "--bogus"]).status.code(), Some(2));
    let data = generated(&dir, "g", "1");
    let out = dir.path().join("t");
    let res = adbcr(&["train", "--data", p(&data), "--mode", "nope", "--out", p(&out)]);
    assert_eq!(res.status.code(), Some(2));
    assert_eq!(json(&out.join("report.json"))["status"], "failed");
    assert_eq!(json(&out.join("manifest.json"))["status"], "failed");
}

#[test]
fn train_then_eval_reproduces_metrics_and_checkpoints() {
    let dir = TempDir::new().unwrap();
    let data = generated(&dir, "g", "2");
    let run = |name: &str| {
        let out = dir.path().join(name);
        let mut args = vec!["train", "--data", p(&data), "--mode", "adbcr", "--seed", "9", "--out"];
        let out_s = out.to_str().unwrap().to_string();
        args.push(&out_s);
        args.extend(SMALL);
        ok(&args);
        out
    };
    let a = run("a");
    let b = run("b");
    assert_eq!(fs::read(a.join("model.ckpt")).unwrap(), fs::read(b.join("model.ckpt")).unwrap());
    assert_eq!(fs::read(a.join("history.log")).unwrap(), fs::read(b.join("history.log")).unwrap());
    let history = fs::read_to_string(a.join("history.log")).unwrap();
    assert_eq!(history.lines().count(), 4);
    assert!(history.starts_with("epoch=1 L_fact="));

    let report = json(&a.join("report.json"));
    assert_eq!(report["status"], "ok");
    let e = dir.path().join("e");
    ok(&["eval", "--checkpoint", p(&a.join("model.ckpt")), "--data", p(&data), "--out", p(&e)]);
    let evaluated = json(&e.join("report.json"));
    for sample in ["within", "out_of_sample"] {
        for key in ["sqrt_pehe", "ate_error", "factual_mse", "n"] {
            assert_eq!(report[sample][key], evaluated[sample][key], "{sample}.{key}");
        }
    }
    let manifest = json(&a.join("manifest.json"));
    assert_eq!(manifest["seed"], 9);
    assert!(manifest["config"].as_array().unwrap().iter().any(|c| c == "max_epochs=4"));
}

#[test]
fn every_mode_trains() {
    let dir = TempDir::new().unwrap();
    let data = generated(&dir, "g", "3");
    for mode in ["adbcr", "uadbcr", "a-tarnet", "danncr", "s-lasso", "t-lasso"] {
        let out = dir.path().join(mode);
        let mut args = vec!["train", "--data", p(&data), "--mode", mode, "--unlabeled", "test", "--out", p(&out)];
        args.extend(SMALL);
        ok(&args);
        let report = json(&out.join("report.json"));
        assert_eq!(report["status"], "ok", "{mode}");
        assert!(report["out_of_sample"]["sqrt_pehe"].as_f64().unwrap().is_finite(), "{mode}");
    }
}

#[test]
fn eval_without_ground_truth_reports_factual_error_only() {
    let dir = TempDir::new().unwrap();
    let data = generated(&dir, "g", "4");
    let text = fs::read_to_string(&data).unwrap();
    // Drop the counterfactual and noiseless outcome columns.
    let stripped: String = text
        .lines()
        .map(|l| {
            let cells: Vec<&str> = l.split(',').collect();
            let kept: Vec<&str> = [&cells[..2], &cells[5..]].concat();
            kept.join(",") + "\n"
        })
        .collect();
    let plain = dir.path().join("plain.csv");
    fs::write(&plain, stripped).unwrap();

    let out = dir.path().join("t");
    let mut args = vec!["train", "--data", p(&plain), "--mode", "t-lasso", "--out", p(&out)];
    args.extend(SMALL);
    ok(&args);
    let res = ok(&["eval", "--checkpoint", p(&out.join("model.ckpt")), "--data", p(&plain)]);
    let report: serde_json::Value = serde_json::from_slice(&res.stdout).unwrap();
    let oos = &report["out_of_sample"];
    assert!(oos["sqrt_pehe"].is_null());
    assert!(oos["factual_mse"].as_f64().unwrap() > 0.0);
    assert!(oos["reason"].as_str().unwrap().contains("ground truth"));
}

#[test]
fn eval_rejects_mismatched_data_and_corrupt_checkpoints() {
    let dir = TempDir::new().unwrap();
    let data = generated(&dir, "g", "5");
    let out = dir.path().join("t");
    ok(&["train", "--data", p(&data), "--mode", "s-lasso", "--out", p(&out)]);
    let wide = dir.path().join("w");
    ok(&["generate", "--n", "100", "--d", "6", "--out", p(&wide)]);
    let res = adbcr(&["eval", "--checkpoint", p(&out.join("model.ckpt")), "--data", p(&wide.join("data.csv"))]);
    assert_eq!(res.status.code(), Some(1));

    let ckpt = out.join("model.ckpt");
    let mut bytes = fs::read(&ckpt).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0xff;
    fs::write(&ckpt, bytes).unwrap();
    let res = adbcr(&["eval", "--checkpoint", p(&ckpt), "--data", p(&data)]);
    assert_eq!(res.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&res.stderr).contains("checkpoint"));
}

#[test]
fn search_writes_one_row_per_run() {
    let dir = TempDir::new().unwrap();
    let data = generated(&dir, "g", "6");
    let space = dir.path().join("space.kv");
    fs::write(&space, "shared_layers=[8];[6,6]\nhead_layers=[4]\nbatch_size=60\nk=1,2\ndraws=2\n").unwrap();
    let out = dir.path().join("s");
    let mut args = vec!["search", "--data", p(&data), "--space", p(&space), "--jobs", "2", "--out", p(&out)];
    args.extend(["--set", "max_epochs=3"]);
    ok(&args);
    let runs = fs::read_to_string(out.join("runs.csv")).unwrap();
    assert_eq!(runs.lines().count(), 1 + 4);
    assert!(runs.lines().skip(1).all(|l| l.contains(",ok,")));
    assert!(out.join("best.ckpt").exists());
    assert_eq!(json(&out.join("report.json"))["status"], "ok");

    // Parallel and serial searches agree.
    let serial = dir.path().join("s1");
    let mut args = vec!["search", "--data", p(&data), "--space", p(&space), "--jobs", "1", "--out", p(&serial)];
    args.extend(["--set", "max_epochs=3"]);
    ok(&args);
    assert_eq!(fs::read(out.join("runs.csv")).unwrap(), fs::read(serial.join("runs.csv")).unwrap());
    assert_eq!(fs::read(out.join("best.ckpt")).unwrap(), fs::read(serial.join("best.ckpt")).unwrap());
}
