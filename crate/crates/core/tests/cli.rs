use pbnet::experiments::RunConfig;
use pbnet::params::read_params_bin;
use pbnet::training::{CsTemplate, ProblemConfig};
use serde_json::Value;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn pbnet(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pbnet"))
        .args(args)
        .current_dir(cwd)
        .env("NO_COLOR", "1")
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn write(dir: &Path, name: &str, body: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, body).unwrap();
    p.to_str().unwrap().to_string()
}

fn manifest(out: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap()
}

#[test]
fn corrupted_config_exits_2_without_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let commands = ["train", "benchmark", "gradcheck", "invtest"];
    let mut cases: Vec<(&str, &str)> = Vec::new();
    for cmd in commands {
        cases.push((cmd, r#"{"problem": {"m": 7,"#));
        cases.push((cmd, r#"{"problem": {"alfa": 1}}"#));
    }
    // Invtest sets its own step size from the target contraction.
    for cmd in ["train", "benchmark", "gradcheck"] {
        cases.push((cmd, r#"{"problem": {"alpha": 50.0}}"#));
    }
    cases.extend([
        ("train", r#"{"train": {"batch_size": 0}}"#),
        ("benchmark", r#"{"benchmark": {"repeats": 0}}"#),
        ("gradcheck", r#"{"gradcheck": {"fd_step": 0}}"#),
        ("invtest", r#"{"invtest": {"contraction": 1.5}}"#),
    ]);
    for (cmd, body) in cases {
        let cfg = write(dir.path(), "bad.json", body);
        let o = pbnet(
            &[cmd, "--config", &cfg, "--out", out.to_str().unwrap()],
            dir.path(),
        );
        assert_eq!(
            o.status.code(),
            Some(2),
            "{cmd} {body}: {}",
            String::from_utf8_lossy(&o.stderr)
        );
        assert!(!out.exists(), "{cmd} left artifacts");
    }
}

#[test]
fn experiment_guard_and_unknown_engine() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.json", r#"{"experiment": "benchmark"}"#);
    let o = pbnet(&["train", "--config", &cfg, "--out", "o"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    let o = pbnet(&["train", "--engine", "fast"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(!dir.path().join("o").exists() && !dir.path().join("out").exists());
}

#[test]
fn zero_epochs_writes_initial_params() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "c.json",
        r#"{"seed": 11, "problem": {"n_layers": 30}, "train": {"epochs": 0}, "data": {"n_test": 10}}"#,
    );
    let o = pbnet(&["train", "--config", &cfg, "--out", "run"], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let out = dir.path().join("run");

    let bytes = fs::read(out.join("params.bin")).unwrap();
    assert_eq!(&bytes[..8], b"PBNPARAM");
    assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 1);
    let count = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    assert_eq!(bytes.len(), 16 + 8 * count);
    let values = read_params_bin(bytes.as_slice()).unwrap();

    let run =
        RunConfig::from_json(&fs::read_to_string(dir.path().join("c.json")).unwrap()).unwrap();
    let t = CsTemplate::new(ProblemConfig {
        n_layers: 30,
        ..ProblemConfig::default()
    })
    .unwrap();
    let init = t.init_params(run.seeds().matrix).unwrap();
    assert_eq!(values, init.flatten());

    let history = fs::read_to_string(out.join("loss_history.csv")).unwrap();
    let lines: Vec<&str> = history.lines().collect();
    assert_eq!(lines[0], "epoch,train_mse,test_mse");
    assert_eq!(lines.len(), 2);

    let m = manifest(&out);
    assert_eq!(m["command"], "train");
    assert_eq!(m["seeds"]["master"], 11);
    assert_eq!(m["summary"]["epochs_run"], 0);
    assert_eq!(m["config"]["train"]["epochs"], 0);
    let layout_len: u64 = m["param_layout"]
        .as_array()
        .unwrap()
        .iter()
        .map(|p| p["len"].as_u64().unwrap())
        .sum();
    assert_eq!(layout_len as usize, count);
}

#[test]
fn train_is_deterministic_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "c.json",
        r#"{"problem": {"n_layers": 40}, "train": {"epochs": 2, "checkpoints": 4}, "data": {"n_train": 8, "n_test": 8}}"#,
    );
    for out in ["a", "b"] {
        let o = pbnet(
            &["train", "--config", &cfg, "--seed", "5", "--out", out],
            dir.path(),
        );
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let read = |o: &str| fs::read(dir.path().join(o).join("params.bin")).unwrap();
    assert_eq!(read("a"), read("b"));
    let history = fs::read_to_string(dir.path().join("a/loss_history.csv")).unwrap();
    assert_eq!(history.lines().count(), 4);
}

#[test]
fn benchmark_csv_columns_and_counts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "c.json",
        r#"{"benchmark": {"n_layers": [20, 40], "checkpoints": 5, "repeats": 1}}"#,
    );
    let o = pbnet(
        &[
            "benchmark",
            "--config",
            &cfg,
            "--engine",
            "checkpoint",
            "--out",
            "b",
        ],
        dir.path(),
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(dir.path().join("b/benchmark.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "n_layers,engine,peak_signal_count,peak_bytes,wall_time_ms,grad_rel_err_vs_standard,final_loss"
    );
    let rows: Vec<Vec<String>> = lines
        .map(|l| l.split(',').map(String::from).collect())
        .collect();
    assert_eq!(rows.len(), 4);
    for r in &rows {
        let n: usize = r[0].parse().unwrap();
        let peak: usize = r[2].parse().unwrap();
        let bytes: usize = r[3].parse().unwrap();
        assert_eq!(bytes, peak * 10 * 8);
        match r[1].as_str() {
            "standard" => assert_eq!(peak, n + 1),
            "checkpoint" => assert_eq!(peak, 5),
            other => panic!("unexpected engine {other}"),
        }
        let err: f64 = r[5].parse().unwrap();
        assert!(err <= 1e-12);
    }
    assert_eq!(
        manifest(&dir.path().join("b"))["artifacts"][0],
        "benchmark.csv"
    );
}

#[test]
fn gradcheck_and_invtest_pass_on_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let o = pbnet(
        &["gradcheck", "--engine", "checkpoint", "--out", "g"],
        dir.path(),
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report: Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("g/gradcheck.json")).unwrap())
            .unwrap();
    assert_eq!(report["pass"], true);
    assert_eq!(report["engine"], "checkpoint");

    let o = pbnet(&["invtest", "--out", "i"], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(dir.path().join("i/invtest.csv")).unwrap();
    assert!(csv.starts_with("layer,setting,value,rel_residual,bound,status"));
    assert!(csv.lines().skip(1).all(|l| l.ends_with(",ok")), "{csv}");
}

#[test]
fn numeric_failure_exits_1() {
    // Without checkpoints the memory-efficient gradient drifts far beyond the
    // engine tolerance on this problem.
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.json", r#"{"gradcheck": {"checkpoints": 0}}"#);
    let o = pbnet(&["gradcheck", "--config", &cfg, "--out", "g"], dir.path());
    assert_eq!(
        o.status.code(),
        Some(1),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    let stderr = String::from_utf8_lossy(&o.stderr);
    assert!(stderr.contains("gradient check failed"));
    assert!(dir.path().join("g/gradcheck.json").exists());
}

#[test]
fn no_color_disables_escape_codes() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_pbnet"))
        .args(["invtest", "--out", "i"])
        .current_dir(dir.path())
        .env("NO_COLOR", "1")
        .env("RUST_LOG", "info")
        .env("RUST_LOG_STYLE", "always")
        .output()
        .unwrap();
    assert!(o.status.success());
    let stderr = String::from_utf8_lossy(&o.stderr);
    assert!(stderr.contains("INFO"));
    assert!(!stderr.contains('\u{1b}'));
}
