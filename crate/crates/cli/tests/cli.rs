use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_shepard-dp")).args(args).output().unwrap()
}

fn config(name: &str) -> String {
    configs().join(name).to_string_lossy().into_owned()
}

#[test]
fn solve_writes_values_and_residuals() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = run(&["solve", "-c", &config("linear1d.json"), "-o", out]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8(o.stdout).unwrap();
    assert!(stdout.contains("converged"));
    assert!(stdout.contains("n            41"));
    let values = std::fs::read_to_string(dir.path().join("values.csv")).unwrap();
    assert_eq!(values.lines().count(), 42);
    assert!(dir.path().join("residuals.csv").exists());
}

#[test]
fn simulate_takes_x0_from_the_command_line() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = run(&["simulate", "-c", &config("linear1d.json"), "--x0", "0.5", "--steps", "5", "-o", out]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8(o.stdout).unwrap().contains("(target)"));
    let traj = std::fs::read_to_string(dir.path().join("trajectory.csv")).unwrap();
    assert_eq!(traj.lines().next(), Some("step,x1,u1,stage_cost,V,e,c_tilde,in_R_eta"));
    let decay: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("decay.json")).unwrap()).unwrap();
    assert_eq!(decay["termination"], "target");
}

#[test]
fn convergence_study_and_residual_map() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = run(&[
        "convergence-study",
        "-c",
        &config("linear1d_study.json"),
        "--set",
        "study.k_list=[5,10,20]",
        "--set",
        "study.reference_k=40",
        "-o",
        out,
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(dir.path().join("convergence.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
    let again = run(&["convergence-study", "-c", &config("linear1d_study.json"), "--set", "study.k_list=[5,10,20]",
        "--set", "study.reference_k=40", "-o", out]);
    assert!(String::from_utf8(again.stdout).unwrap().contains("reference cached"));

    let o = run(&["residual-map", "-c", &config("pendulum.json"), "--set", "grid=[20,20]", "-o", out]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(dir.path().join("residual.csv").exists());
}

#[test]
fn compare_interpolation_reports_both_iterations() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["compare-interpolation", "-c", &config("linear1d.json"), "-o", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8(o.stdout).unwrap().contains("interpolation"));
    let csv = std::fs::read_to_string(dir.path().join("compare.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("iteration,shepard_residual,interpolation_residual"));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let missing = dir.path().join("missing.json");
    assert_eq!(run(&["solve", "-c", missing.to_str().unwrap()]).status.code(), Some(4));
    let both = run(&["solve", "-c", &config("linear1d.json"), "--set", "kernel.sigma=2", "-o", out]);
    assert_eq!(both.status.code(), Some(2));
    assert!(String::from_utf8(both.stderr).unwrap().contains("exactly one"));
    let unknown = run(&["solve", "-c", &config("linear1d.json"), "--set", "problem.bogus=1", "-o", out]);
    assert_eq!(unknown.status.code(), Some(2));
    let below_floor = run(&[
        "simulate", "-c", &config("linear1d.json"), "--x0", "1.0", "--set", "feedback.floor=0.5", "-o", out,
    ]);
    assert_eq!(below_floor.status.code(), Some(3));
    let bad_map = dir.path().join("bad.pgm");
    std::fs::write(&bad_map, b"P5\n4\n").unwrap();
    let o = run(&[
        "solve", "-c", &config("shortest_path.json"), "--set", &format!("problem.map={}", bad_map.display()), "-o", out,
    ]);
    assert_eq!(o.status.code(), Some(4));
    assert!(String::from_utf8(o.stderr).unwrap().contains("byte offset 5"));
}
