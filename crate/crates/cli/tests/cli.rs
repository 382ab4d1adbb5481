//! Behavior of the `gnnflow` binary: exit codes, output files, and
//! byte-identical reproducibility.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_gnnflow"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn write_config(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path.display().to_string()
}

const SMALL_TRAIN: &str = r#"{
  "graphs": [{ "model": "er", "n": 40, "p": 0.4 }],
  "shifts": ["sl-adj"],
  "d_x": 4,
  "depth": 2,
  "hidden": [4, 3],
  "labeled_fraction": 0.75,
  "init": { "scheme": "theorem", "a": "auto" },
  "dynamics": { "algo": "flow", "t_max": 10000.0, "tol": 1e-8 },
  "seed": 11
}"#;

#[test]
fn unknown_flags_are_usage_errors() {
    let out = run(&["train", "--nonsense"]);
    assert_eq!(out.status.code(), Some(2));

    let out = run(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_config_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&[
        "train",
        "--config",
        "/nonexistent/config.json",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("error:"), "stderr: {stderr}");
}

#[test]
fn gen_graph_is_deterministic_and_complete_at_p_one() {
    let dir1 = tempfile::tempdir().unwrap();
    let dir2 = tempfile::tempdir().unwrap();
    for dir in [&dir1, &dir2] {
        let out = run(&[
            "gen-graph",
            "--model",
            "er",
            "--n",
            "5",
            "--p",
            "1.0",
            "--seed",
            "3",
            "--out",
            dir.path().to_str().unwrap(),
        ]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let a = fs::read(dir1.path().join("edges.csv")).unwrap();
    let b = fs::read(dir2.path().join("edges.csv")).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.iter().filter(|&&c| c == b'\n').count(), 10);
}

#[test]
fn gen_graph_rejects_bad_model_and_missing_params() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["gen-graph", "--model", "tree", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));

    let out = run(&["gen-graph", "--model", "er", "--n", "5", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn train_produces_certificate_and_trajectory_within_the_bound() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "cfg.json", SMALL_TRAIN);
    let out_dir = dir.path().join("run");
    let out = run(&["train", "--config", &cfg, "--out", out_dir.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_dir.join("init_report.json")).unwrap())
            .unwrap();
    assert_eq!(report["valid"], serde_json::Value::Bool(true));
    let alpha = report["alpha_lower"].as_f64().unwrap();

    let trajectory = fs::read_to_string(out_dir.join("trajectory.csv")).unwrap();
    let mut lines = trajectory.lines();
    assert_eq!(lines.next().unwrap(), "t,loss,rel_loss,grad_norm_sq,balance_residual");
    for line in lines {
        let cells: Vec<f64> = line.split(',').map(|c| c.parse().unwrap()).collect();
        let (t, rel) = (cells[0], cells[2]);
        assert!(
            rel <= (-alpha * t).exp() * (1.0 + 1e-6),
            "envelope violated at t={t}: rel={rel}"
        );
    }

    let summary: serde_json::Value =
        serde_json::from_str(String::from_utf8_lossy(&out.stdout).lines().last().unwrap())
            .unwrap();
    assert!(summary["final_rel_loss"].as_f64().unwrap() <= 1e-8);
}

#[test]
fn predict_reports_unit_a_for_zero_labels() {
    let dir = tempfile::tempdir().unwrap();
    // a constant label row z-scores to all zeros, so Y = 0
    let zeros = vec!["0"; 30].join(",");
    fs::write(dir.path().join("labels.csv"), format!("{zeros}\n")).unwrap();
    let cfg = write_config(
        dir.path(),
        "cfg.json",
        &format!(
            r#"{{
  "graphs": [{{ "model": "er", "n": 30, "p": 0.4 }}],
  "shifts": ["sl-adj"],
  "d_x": 3,
  "depth": 1,
  "hidden": [3],
  "labeled_fraction": 1.0,
  "labels_csv": "{}",
  "init": {{ "scheme": "theorem", "a": "auto" }},
  "dynamics": {{ "algo": "flow", "t_max": 1.0, "tol": 1e-8 }},
  "seed": 3
}}"#,
            dir.path().join("labels.csv").display()
        ),
    );
    let out = run(&["predict", "--config", &cfg]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value =
        serde_json::from_str(&String::from_utf8_lossy(&out.stdout)).unwrap();
    let a = v["min_admissible_a"].as_f64().unwrap();
    assert!((a - 1.0).abs() < 1e-6, "min_admissible_a = {a}");
}

#[test]
fn sweep_outputs_are_byte_identical_across_runs_and_job_counts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "cfg.json",
        r#"{
  "graphs": [{ "model": "er", "n": 24, "p": 0.3 }],
  "shifts": ["adj", "lap"],
  "d_x": 4,
  "depth": 2,
  "hidden": [4, 3],
  "n_bar_grid": [6, 12, 18, 24],
  "labeled_fraction": 0.75,
  "init": { "scheme": "theorem", "a": "auto" },
  "dynamics": { "algo": "flow", "t_max": 1000.0, "tol": 1e-7 },
  "replications": 3,
  "seed": 42
}"#,
    );
    let mut outputs = Vec::new();
    for (sub, jobs) in [("sigma-sweep", "1"), ("sigma-sweep", "2"), ("sweep", "1"), ("sweep", "2")]
    {
        let out_dir = dir.path().join(format!("{sub}-{jobs}"));
        let out = run(&[
            sub,
            "--config",
            &cfg,
            "--out",
            out_dir.to_str().unwrap(),
            "--jobs",
            jobs,
        ]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        let file = if sub == "sigma-sweep" { "sigma_sweep.csv" } else { "convergence_sweep.csv" };
        outputs.push((sub, fs::read(out_dir.join(file)).unwrap()));
    }
    assert_eq!(outputs[0].1, outputs[1].1, "sigma sweep differs across job counts");
    assert_eq!(outputs[2].1, outputs[3].1, "convergence sweep differs across job counts");
}

#[test]
fn verify_suite_exits_zero() {
    let out = run(&["verify"]);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(
        out.status.success(),
        "verify failed:\n{stdout}\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert_eq!(stdout.lines().filter(|l| l.starts_with("ok  ")).count(), 7);
}
