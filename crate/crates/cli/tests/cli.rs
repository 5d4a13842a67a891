use std::fs;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_subspace-iv"))
}

fn small_config(dir: &std::path::Path) -> std::path::PathBuf {
    let path = dir.join("run.toml");
    fs::write(
        &path,
        "[scenario]\nn_iv = 8\nd_x = 10\nd_id = 3\n\n[selection]\nt_max = 2\nmax_per_round = 2\nn_per_experiment = 200\n\n[harness]\nn_runs = 3\n",
    )
    .unwrap();
    path
}

#[test]
fn generate_prints_scenario_json() {
    let out = bin()
        .args(["generate", "--n-iv", "5", "--d-x", "4", "--d-id", "2", "--seed", "7"])
        .output()
        .unwrap();
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["n_iv"], 5);
    assert_eq!(v["alpha"].as_array().unwrap().len(), 5);
}

#[test]
fn run_prints_a_trajectory() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let out = bin()
        .args(["run", "--strategy", "random", "--seed", "4", "--noiseless"])
        .arg("--config")
        .arg(&cfg)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["strategy"], "random");
    assert!(v["rounds"].as_array().unwrap().len() <= 2);
}

#[test]
fn sweep_then_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let out_dir = dir.path().join("out");
    let status = bin()
        .args(["sweep", "--workers", "1", "--seed", "9"])
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(&out_dir)
        .status()
        .unwrap();
    assert!(status.success());
    let first = fs::read(out_dir.join("report.csv")).unwrap();
    let status = bin().arg("report").arg(&out_dir).status().unwrap();
    assert!(status.success());
    assert_eq!(first, fs::read(out_dir.join("report.csv")).unwrap());
}

#[test]
fn finite_sample_writes_files() {
    let dir = tempfile::tempdir().unwrap();
    let status = bin()
        .args(["finite-sample", "--d-x", "4", "--runs", "5", "--n", "200"])
        .arg("--out")
        .arg(dir.path())
        .status()
        .unwrap();
    assert!(status.success());
    let text = fs::read_to_string(dir.path().join("finite_sample_summary.csv")).unwrap();
    assert!(text.starts_with("estimator,component,truth,n,mean,sd,p10,q1,median,q3,p90,median_se"));
}

#[test]
fn bad_input_fails() {
    let out = bin()
        .args(["run", "--norm-provider", "guess"])
        .output()
        .unwrap();
    assert!(!out.status.success());
    let out = bin().args(["report"]).output().unwrap();
    assert!(!out.status.success());
}
