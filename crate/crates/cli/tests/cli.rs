use std::path::Path;
use std::process::{Command, Output};

const SMALL: &[&str] = &[
    "--benchmark",
    "locper1d",
    "--mesh-h",
    "0.000244140625",
    "--eval-h",
    "0.001",
    "--n-data",
    "40",
    "--n-colloc",
    "50",
    "--restarts",
    "1",
    "--set",
    "network.solution_width=6",
    "--set",
    "network.coefficient_width=4",
];

fn glimit(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_glimit"))
        .args(args)
        .arg("--out")
        .arg(out)
        .env("RUST_LOG", "warn")
        .env_remove("GLIMIT_THREADS")
        .output()
        .expect("binary runs")
}

fn with_small<'a>(sub: &'a str, extra: &[&'a str]) -> Vec<&'a str> {
    let mut v = vec![sub];
    v.extend_from_slice(SMALL);
    v.extend_from_slice(extra);
    v
}

fn ok(o: &Output) {
    assert!(o.status.success(), "status {:?}\n{}", o.status, String::from_utf8_lossy(&o.stderr));
}

#[test]
fn pipeline_smoke_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    ok(&glimit(&with_small("generate", &[]), &run));
    ok(&glimit(&with_small("reference", &[]), &run));
    let budget = ["--epochs", "30", "--lbfgs-iters", "10"];
    ok(&glimit(&with_small("train", &budget), &run));
    let first = std::fs::read(run.join("report.json")).unwrap();
    ok(&glimit(&with_small("train", &budget), &run));
    assert_eq!(first, std::fs::read(run.join("report.json")).unwrap());
    let report: serde_json::Value = serde_json::from_slice(&first).unwrap();
    assert!(report["e_glimit"].as_f64().unwrap() >= 0.0);
    ok(&glimit(&with_small("evaluate", &budget), &run));
    assert_eq!(first, std::fs::read(run.join("report.json")).unwrap());
    ok(&glimit(&with_small("export-plots", &budget), &run));
    assert!(run.join("plot_glimit.csv").exists() && run.join("plot_solution.csv").exists());
}

#[test]
fn zero_budget_reports_initialization() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    ok(&glimit(&with_small("generate", &[]), &run));
    ok(&glimit(&with_small("reference", &[]), &run));
    ok(&glimit(&with_small("train", &["--epochs", "0", "--lbfgs-iters", "0"]), &run));
    let log = std::fs::read_to_string(run.join("train_log.csv")).unwrap();
    assert_eq!(log.lines().count(), 1);
    assert!(run.join("report.csv").exists());
}

#[test]
fn config_file_with_flag_override() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    std::fs::write(&cfg, r#"{"benchmark": "oscil1d", "noise": 0.1, "n_data": 20, "mesh_h": 0.0009765625}"#).unwrap();
    let run = dir.path().join("run");
    let o = glimit(&["generate", "--config", cfg.to_str().unwrap(), "--noise", "0.02"], &run);
    ok(&o);
    let m: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(run.join("data.manifest.json")).unwrap()).unwrap();
    assert_eq!(m["noise"], 0.02);
    assert_eq!(m["benchmark"], "oscil1d");
    assert_eq!(m["n_samples"], 20);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    let bad = glimit(&with_small("generate", &["--noise", "0.5"]), &run);
    assert_eq!(bad.status.code(), Some(2));
    let unknown = glimit(&["generate", "--benchmark", "heat"], &run);
    assert_eq!(unknown.status.code(), Some(2));
    let missing = glimit(&with_small("train", &[]), &dir.path().join("nothing"));
    assert_eq!(missing.status.code(), Some(2));
    let typo = glimit(&with_small("generate", &["--set", "nosie=0.1"]), &run);
    assert_eq!(typo.status.code(), Some(2));
}

#[test]
fn sweeps() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty");
    ok(&glimit(&with_small("sweep", &["--axis", "noise", "--values"]), &empty));
    let text = std::fs::read_to_string(empty.join("sweep.csv")).unwrap();
    assert_eq!(text.lines().count(), 1);

    let partial = dir.path().join("partial");
    let o = glimit(
        &with_small(
            "sweep",
            &["--axis", "noise", "--values", "0,0.9", "--epochs", "5", "--lbfgs-iters", "0"],
        ),
        &partial,
    );
    assert_eq!(o.status.code(), Some(4), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(partial.join("sweep.csv")).unwrap();
    let rows: Vec<&str> = text.lines().collect();
    assert_eq!(rows.len(), 3);
    assert!(rows[1].ends_with(",ok"));
    assert!(rows[2].contains("failed"));
}

#[test]
fn output_root_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_glimit"))
        .args(with_small("generate", &[]))
        .env("GLIMIT_OUTPUT_ROOT", dir.path())
        .output()
        .unwrap();
    ok(&o);
    assert!(dir.path().join("locper1d").join("data.csv").exists());
}
