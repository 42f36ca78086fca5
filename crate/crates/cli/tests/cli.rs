use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = r#"
seeds = [0]
tau = 2
[source]
domain = "source"
gamma = 10.0
seed = 0
n_train = 8
n_val = 4
n_test = 4
horizon = 8
[target]
domain = "target"
gamma = 0.0
seed = 1
n_train = 4
n_val = 4
n_test = 4
horizon = 8
[encoder]
d_model = 8
n_heads = 2
n_layers = 1
[ssl]
epochs = 1
batch_size = 4
[finetune]
epochs = 1
"#;

fn costar(dir: &Path, args: &[&str]) -> Output {
    let out = Command::new(env!("CARGO_BIN_EXE_costar"))
        .current_dir(dir)
        .env("COSTAR_DATA_DIR", dir.join("data"))
        .env("RUST_BACKTRACE", "0")
        .args(args)
        .output()
        .expect("binary runs");
    if !out.status.success() {
        eprintln!("stderr: {}", String::from_utf8_lossy(&out.stderr));
    }
    out
}

fn setup() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("tiny.toml"), TINY).unwrap();
    dir
}

fn report_without_timings(path: &Path) -> serde_json::Value {
    let mut v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
    v["wall_clock_secs"] = 0.0.into();
    for run in v["runs"].as_array_mut().unwrap() {
        run["wall_clock_secs"] = 0.0.into();
    }
    v
}

#[test]
fn simulate_pretrain_train_evaluate_pipeline() {
    let dir = setup();
    let d = dir.path();
    assert!(costar(d, &["--config", "tiny.toml", "simulate", "--gamma", "2", "--splits", "8,4,4", "--horizon", "8"]).status.success());
    assert!(d.join("data/source.jsonl").exists());
    assert!(costar(d, &["--config", "tiny.toml", "simulate", "--domain", "target"]).status.success());
    assert!(d.join("data/target.jsonl").exists());

    assert!(costar(d, &["--config", "tiny.toml", "--out", "pre.json", "pretrain"]).status.success());
    let log = std::fs::read_to_string(d.join("pre.log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 2, "one record per optimizer step");

    let train = ["--config", "tiny.toml", "--out", "model.json", "train", "--encoder", "pre.json", "--scheme", "sq_inv", "--tau", "2"];
    assert!(costar(d, &train).status.success());
    let ckpt: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(d.join("model.json")).unwrap()).unwrap();
    assert_eq!(ckpt["scheme"], "sq_inv");
    assert_eq!(ckpt["predictor"]["tau"], 2);

    let out = costar(d, &["--config", "tiny.toml", "--out", "eval", "evaluate", "--model", "model.json"]);
    assert!(out.status.success());
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("| COSTAR |") && stdout.contains("| Last value |"), "{stdout}");
    for f in ["report.json", "metrics.jsonl", "summary.md", "rmse_vs_horizon.svg"] {
        assert!(d.join("eval").join(f).exists(), "{f} missing");
    }
}

#[test]
fn train_without_encoder_starts_from_random_init() {
    let dir = setup();
    let d = dir.path();
    assert!(costar(d, &["--config", "tiny.toml", "simulate"]).status.success());
    assert!(costar(d, &["--config", "tiny.toml", "--out", "m.json", "train", "--tau", "1"]).status.success());
    assert!(d.join("m.json").exists());
}

#[test]
fn report_runs_and_rerenders_identically() {
    let dir = setup();
    let d = dir.path();
    assert!(costar(d, &["--config", "tiny.toml", "--deterministic", "--out", "a", "report"]).status.success());
    assert!(costar(d, &["--config", "tiny.toml", "--deterministic", "--out", "b", "report", "--no-plots"]).status.success());
    assert!(d.join("a/rmse_vs_horizon.svg").exists());
    assert!(!d.join("b/rmse_vs_horizon.svg").exists());
    assert!(d.join("a/seed-0/pretrain_log.jsonl").exists());
    assert_eq!(report_without_timings(&d.join("a/report.json")), report_without_timings(&d.join("b/report.json")));

    let out = costar(d, &["--out", "c", "report", "--from", "a/report.json"]);
    assert!(out.status.success());
    assert_eq!(
        std::fs::read_to_string(d.join("a/report.json")).unwrap(),
        std::fs::read_to_string(d.join("c/report.json")).unwrap()
    );
}

#[test]
fn theory_check_writes_report_and_exits_zero() {
    let dir = setup();
    let d = dir.path();
    let out = costar(d, &["--seed", "3", "theory-check", "--suite", "lemma", "--instances", "40", "--report", "lemma.json"]);
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(d.join("lemma.json")).unwrap()).unwrap();
    assert_eq!(v["suite"], "lemma");
    assert_eq!(v["n_passed"], 40);
    assert_eq!(v["n_failed"], 0);
}

#[test]
fn bad_arguments_fail_cleanly() {
    let dir = setup();
    let d = dir.path();
    assert!(!costar(d, &["simulate", "--splits", "1,2"]).status.success());
    assert!(!costar(d, &["theory-check", "--suite", "nonsense"]).status.success());
    assert!(!costar(d, &["evaluate", "--model", "missing.json"]).status.success());
    std::fs::write(d.join("bad.toml"), "tau = 0\n").unwrap();
    assert!(!costar(d, &["--config", "bad.toml", "simulate"]).status.success());
}
