use std::path::Path;
use std::process::{Command, Output};

fn kreinlab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kreinlab"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn form_bound_prints_the_certified_pair() {
    let out = kreinlab(&["form-bound", "mesh.k_per_side=300"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("a = "), "{text}");
    assert!(text.contains("alpha_max = "), "{text}");
}

#[test]
fn convergence_writes_csv_and_sidecar() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("run");
    let out = kreinlab(&[
        "convergence",
        "--out",
        out_dir.to_str().unwrap(),
        "mesh.k_per_side=150",
        "experiment.schedule=10,100",
        "experiment.norm_iterations=30",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let csv = std::fs::read_to_string(out_dir.join("convergence.csv")).unwrap();
    assert!(csv.starts_with("# generated at unix time "), "{csv}");
    assert!(
        csv.lines().nth(1).unwrap().starts_with("n,spec,vector_id,sre_error"),
        "{csv}"
    );
    // 2 levels x 2 specs x 5 probe vectors, plus comment and header
    assert_eq!(csv.lines().count(), 22);
    let sidecar = std::fs::read_to_string(out_dir.join("convergence.json")).unwrap();
    let parsed: serde_json::Value = serde_json::from_str(&sidecar).unwrap();
    assert!(parsed["config_hash"].is_string());
    assert_eq!(parsed["config"]["mesh"]["k_per_side"], 150);
}

#[test]
fn config_file_and_overrides_combine() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(
        &cfg,
        "[mesh]\nk_per_side = 200 # coarse\n[experiment]\nschedule = 10,100\n",
    )
    .unwrap();
    let out_dir = dir.path().join("adm");
    let out = kreinlab(&[
        "admissibility",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
        "potential.beta=1.5",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stdout(&out).contains("verdict = "), "{}", stdout(&out));
    assert!(out_dir.join("admissibility.csv").exists());
}

#[test]
fn spectrum_reports_eigenvalue_tracks() {
    let dir = tempfile::tempdir().unwrap();
    let out = kreinlab(&[
        "spectrum",
        "--k",
        "2",
        "--out",
        dir.path().to_str().unwrap(),
        "mesh.k_per_side=150",
        "experiment.schedule=10",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let csv = std::fs::read_to_string(dir.path().join("spectrum.csv")).unwrap();
    assert!(csv.contains("spectrum"), "{csv}");
}

#[test]
fn oracle_passes_and_writes_empty_failure_log() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("oracle.jsonl");
    let out = kreinlab(&[
        "oracle",
        "--seeds",
        "5",
        "--dim",
        "6",
        "--codim",
        "2",
        "--out",
        log.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stdout(&out).contains("all correspondence checks passed"));
    assert_eq!(std::fs::read_to_string(&log).unwrap(), "");
}

#[test]
fn validation_problems_exit_with_code_one() {
    let out = kreinlab(&["convergence", "mesh.k_per_side=oops"]);
    assert_eq!(out.status.code(), Some(1), "{}", stderr(&out));

    let out = kreinlab(&["convergence", "experiment.unknown_knob=3"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("unknown config key"));

    let out = kreinlab(&[
        "convergence",
        "mesh.k_per_side=150",
        "experiment.alpha=1e9",
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("alpha < 1/a"), "{}", stderr(&out));
}

#[test]
fn numerical_problems_exit_with_code_two() {
    // a shift above the uniform lower bound cannot be inverted safely
    let out = kreinlab(&[
        "convergence",
        "mesh.k_per_side=150",
        "experiment.schedule=10",
        "experiment.z=5",
    ]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
    assert!(stderr(&out).contains("shift"), "{}", stderr(&out));
}

#[test]
fn missing_config_file_is_a_validation_error() {
    let out = kreinlab(&["form-bound", "--config", "/nonexistent/path.cfg"]);
    assert_eq!(out.status.code(), Some(1));
    let _ = Path::new("/nonexistent");
}
