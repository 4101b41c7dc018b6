//! End-to-end tests of the command-line interface: artifact emission,
//! determinism, round-trip fidelity, validation, and exit codes.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_boostresnet"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn boostresnet")
}

fn write_config(dir: &Path, name: &str, body: &str) -> String {
    let path = dir.join(name);
    fs::write(&path, body).unwrap();
    path.to_str().unwrap().to_string()
}

fn blobs_config(out_dir: &Path) -> String {
    format!(
        r#"{{
  "task": "binary",
  "seed": 42,
  "dataset": {{"kind": "blobs", "train_m": 120, "test_m": 60, "n": 2, "classes": 2, "separation": 5.0}},
  "arch": {{"k": 4, "t_max": 3}},
  "oracle": {{"learning_rate": 0.05, "epochs": 12, "batch_size": 32}},
  "out_dir": "{}"
}}"#,
        out_dir.display()
    )
}

#[test]
fn train_boost_writes_all_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let cfg = write_config(dir.path(), "cfg.json", &blobs_config(&out));
    let res = run(&["train-boost", "--config", &cfg]);
    assert!(res.status.success(), "stderr: {}", String::from_utf8_lossy(&res.stderr));

    for artifact in ["model.json", "rounds.csv", "bounds.json", "resolved_config.json"] {
        let path = out.join(artifact);
        assert!(path.exists(), "{artifact} missing");
    }
    // all four parse
    let model: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("model.json")).unwrap()).unwrap();
    assert_eq!(model["version"], 1);
    let bounds: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("bounds.json")).unwrap()).unwrap();
    assert!(bounds["margin_report"]["fractions"].is_array());
    let resolved: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("resolved_config.json")).unwrap())
            .unwrap();
    assert_eq!(resolved["seed"], 42);
    assert!(fs::read_to_string(out.join("rounds.csv"))
        .unwrap()
        .starts_with("# schema: boostresnet.rounds.v1"));
}

#[test]
fn rerun_with_same_seed_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let cfg = write_config(dir.path(), "cfg.json", &blobs_config(&out));
    assert!(run(&["train-boost", "--config", &cfg]).status.success());
    let first_rounds = fs::read(out.join("rounds.csv")).unwrap();
    let first_model = fs::read(out.join("model.json")).unwrap();
    let first_bounds = fs::read(out.join("bounds.json")).unwrap();

    assert!(run(&["train-boost", "--config", &cfg]).status.success());
    assert_eq!(first_rounds, fs::read(out.join("rounds.csv")).unwrap());
    assert_eq!(first_model, fs::read(out.join("model.json")).unwrap());
    assert_eq!(first_bounds, fs::read(out.join("bounds.json")).unwrap());
}

#[test]
fn model_round_trip_evaluates_identically() {
    // load + evaluate equals in-memory evaluation: the eval output is
    // derived entirely from the serialized model, so two eval invocations
    // on the same artifacts must agree exactly; and training again from
    // the same seed reproduces the same model bytes.
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let cfg = write_config(dir.path(), "cfg.json", &blobs_config(&out));
    assert!(run(&["train-boost", "--config", &cfg]).status.success());
    let model = out.join("model.json");
    let a = run(&["eval", "--model", model.to_str().unwrap(), "--config", &cfg]);
    let b = run(&["eval", "--model", model.to_str().unwrap(), "--config", &cfg]);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    let text = String::from_utf8_lossy(&a.stdout).to_string();
    assert!(text.contains("train: accuracy"), "unexpected eval output: {text}");
}

#[test]
fn diagnose_verifies_a_finished_run() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let cfg = write_config(dir.path(), "cfg.json", &blobs_config(&out));
    assert!(run(&["train-boost", "--config", &cfg]).status.success());
    let res = run(&["diagnose", "--run", out.to_str().unwrap()]);
    assert!(res.status.success(), "stderr: {}", String::from_utf8_lossy(&res.stderr));
    let text = String::from_utf8_lossy(&res.stdout).to_string();
    assert!(text.contains("z_product recomputation: consistent within 1e-10"));
    assert!(text.contains("bound chain"));
}

#[test]
fn diagnose_detects_corrupted_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let cfg = write_config(dir.path(), "cfg.json", &blobs_config(&out));
    assert!(run(&["train-boost", "--config", &cfg]).status.success());
    // corrupt one z entry
    let rounds = out.join("rounds.csv");
    let text = fs::read_to_string(&rounds).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    let fields: Vec<String> = lines[2].split(',').map(String::from).collect();
    let mut corrupted = fields.clone();
    corrupted[4] = format!("{}", fields[4].parse::<f64>().unwrap() * 1.5);
    lines[2] = corrupted.join(",");
    fs::write(&rounds, lines.join("\n") + "\n").unwrap();

    let res = run(&["diagnose", "--run", out.to_str().unwrap()]);
    assert!(!res.status.success());
    assert_eq!(res.status.code(), Some(2));
}

#[test]
fn negative_depth_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let body = blobs_config(&out).replace(r#""t_max": 3"#, r#""t_max": -1"#);
    let cfg = write_config(dir.path(), "cfg.json", &body);
    let res = run(&["train-boost", "--config", &cfg]);
    assert_eq!(res.status.code(), Some(1));
    let err = String::from_utf8_lossy(&res.stderr);
    assert!(err.contains("t_max"), "stderr: {err}");
}

#[test]
fn bad_task_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let body = blobs_config(&out).replace(r#""task": "binary""#, r#""task": "regression""#);
    let cfg = write_config(dir.path(), "cfg.json", &body);
    let res = run(&["train-boost", "--config", &cfg]);
    assert_eq!(res.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&res.stderr).contains("task"));
}

#[test]
fn train_e2e_writes_epochs_csv_per_depth() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_dir = dir.path();
    for depth in [1i64, 3] {
        let out = cfg_dir.join(format!("e2e-{depth}"));
        let body = blobs_config(&out).replace(r#""t_max": 3"#, &format!(r#""t_max": {depth}"#));
        let cfg = write_config(cfg_dir, &format!("cfg{depth}.json"), &body);
        let res = run(&["train-e2e", "--config", &cfg]);
        assert!(res.status.success(), "stderr: {}", String::from_utf8_lossy(&res.stderr));
        let text = fs::read_to_string(out.join("epochs.csv")).unwrap();
        assert!(text.starts_with("# schema: boostresnet.epochs.v1"));
        assert_eq!(text.lines().count(), 2 + 12); // schema + header + epochs
    }
}

#[test]
fn out_dir_env_var_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("ignored");
    let actual = dir.path().join("env-out");
    let cfg = write_config(dir.path(), "cfg.json", &blobs_config(&out));
    let res = bin()
        .args(["train-boost", "--config", &cfg])
        .env("BOOSTRESNET_OUT_DIR", actual.to_str().unwrap())
        .output()
        .unwrap();
    assert!(res.status.success());
    assert!(actual.join("rounds.csv").exists());
    assert!(!out.exists());
}

#[test]
fn multiclass_run_emits_exp_loss_column() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("mc");
    let body = format!(
        r#"{{
  "task": "multiclass",
  "seed": 7,
  "dataset": {{"kind": "blobs", "train_m": 90, "test_m": 0, "n": 2, "classes": 3, "separation": 6.0}},
  "arch": {{"k": 4, "t_max": 2}},
  "oracle": {{"learning_rate": 0.05, "epochs": 10, "batch_size": 32}},
  "out_dir": "{}"
}}"#,
        out.display()
    );
    let cfg = write_config(dir.path(), "cfg.json", &body);
    let res = run(&["train-boost", "--config", &cfg]);
    assert!(res.status.success(), "stderr: {}", String::from_utf8_lossy(&res.stderr));
    let text = fs::read_to_string(out.join("rounds.csv")).unwrap();
    assert!(text.starts_with("# schema: boostresnet.rounds.multiclass.v1"));
    assert!(text.lines().nth(1).unwrap().contains("exp_loss"));
}
