use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use ocpec_bench::{build_spec, flag_overlay, Mode, Projector, SpecArgs};
use ocpec_core::bench::{read_trajectory_csv, BenchmarkSpec, RunMode};
use ocpec_core::gap::ProjectorPath;
use serde_json::json;

fn bench(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ocpec-bench")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn no_flags_gives_the_default_spec() {
    assert_eq!(flag_overlay(&SpecArgs::default()), json!({}));
    assert_eq!(build_spec(&SpecArgs::default()).unwrap(), BenchmarkSpec::default());
}

#[test]
fn flags_land_in_the_right_fields() {
    let args = SpecArgs {
        mode: Some(Mode::Continuation),
        n_stages: Some(40),
        s_final: Some(1e-5),
        kappa_t: Some(0.5),
        c: Some(2.0),
        projector: Some(Projector::Polyhedral),
        parallel: true,
        seed: Some(7),
        ..SpecArgs::default()
    };
    let spec = build_spec(&args).unwrap();
    assert_eq!(spec.mode, RunMode::Continuation);
    assert_eq!(spec.n_stages, 40);
    assert_eq!(spec.sgcl.continuation.s_final, 1e-5);
    assert_eq!(spec.sgcl.continuation.kappa_t, 0.5);
    assert_eq!(spec.sgcl.continuation.kappa_e, 1.5);
    assert_eq!(spec.gap.c, 2.0);
    assert_eq!(spec.sgcl.projector_path, ProjectorPath::Polyhedral);
    assert!(spec.sgcl.parallel);
    assert_eq!(spec.seed, 7);
}

#[test]
fn config_file_overrides_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, r#"{"n_stages": 25, "sgcl": {"mu": 10.0}, "bounds": {"u_upper": ["inf"]}}"#).unwrap();
    let args = SpecArgs {
        config: Some(cfg),
        n_stages: Some(40),
        mu: Some(1.0),
        horizon: Some(2.0),
        ..SpecArgs::default()
    };
    let spec = build_spec(&args).unwrap();
    assert_eq!(spec.n_stages, 25);
    assert_eq!(spec.sgcl.mu, 10.0);
    assert_eq!(spec.horizon, 2.0);
    assert_eq!(spec.bounds.u_upper[0].0, f64::INFINITY);
}

#[test]
fn invalid_values_are_rejected() {
    let bad = SpecArgs { kappa_t: Some(1.5), ..SpecArgs::default() };
    assert!(build_spec(&bad).is_err());
    let unknown = SpecArgs { problem: Some("pendulum".into()), ..SpecArgs::default() };
    assert!(build_spec(&unknown).is_err());
    let o = bench(&["run", "--stages", "0", "-o", "/nonexistent/never"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn print_config_round_trips() {
    let o = bench(&["print-config", "--stages", "30", "--s", "1e-4"]);
    assert!(o.status.success());
    let spec: BenchmarkSpec = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(spec.n_stages, 30);
    assert_eq!(spec.s, 1e-4);
}

#[test]
fn geometry_command_writes_csv_with_zero_disagreements() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = bench(&["geometry", "--grid", "50", "--b-lower", "-2", "--b-upper", "0.5", "-o", out]);
    assert!(o.status.success(), "{}", stdout(&o));
    assert!(stdout(&o).contains("0 classification disagreements"));
    let text = fs::read_to_string(dir.path().join("geometry.csv")).unwrap();
    assert_eq!(text.lines().next().unwrap(), "lambda,eta,phi,in_r1,in_r2,in_r3,feasible");
    assert_eq!(text.lines().count(), 1 + 50 * 50);
}

fn run_then_verify(dir: &Path, extra: &[&str]) -> (Output, Output) {
    let out = dir.to_str().unwrap();
    let mut args = vec!["run", "-o", out];
    args.extend_from_slice(extra);
    let run = bench(&args);
    let traj = dir.join("trajectory.csv");
    // Φ ≲ √(2cs) ≈ 1.4e-2 at s = 1e-4
    let verify = bench(&["verify", traj.to_str().unwrap(), "--tol", "2e-2"]);
    (run, verify)
}

#[test]
fn benchmark_run_converges_and_verifies() {
    let dir = tempfile::tempdir().unwrap();
    let (run, verify) = run_then_verify(dir.path(), &["--s", "1e-4"]);
    assert_eq!(run.status.code(), Some(0), "{}", stdout(&run));
    assert!(stdout(&run).contains("stop_"));
    for f in ["trajectory.csv", "iterations.csv", "report.csv", "timing.csv"] {
        assert!(dir.path().join(f).is_file(), "{f}");
    }
    let traj = read_trajectory_csv(&dir.path().join("trajectory.csv")).unwrap();
    assert_eq!(traj[0].rows.len(), 100);
    assert!(stdout(&verify).contains("pass"), "{}", stdout(&verify));
}

#[test]
fn iteration_cap_gives_nonzero_exit_with_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let (run, _) = run_then_verify(dir.path(), &["--k-max", "2"]);
    assert_eq!(run.status.code(), Some(1), "{}", stdout(&run));
    assert!(stdout(&run).contains("max_iter"));
    assert!(dir.path().join("trajectory.csv").is_file());
}

#[test]
fn verify_flags_a_tampered_trajectory() {
    let dir = tempfile::tempdir().unwrap();
    let (run, _) = run_then_verify(dir.path(), &["--s", "1e-4"]);
    assert!(run.status.success());
    let path = dir.path().join("trajectory.csv");
    let text = fs::read_to_string(&path).unwrap();
    let header: Vec<&str> = text.lines().next().unwrap().split(',').collect();
    let col = header.iter().position(|h| h.starts_with("lambda")).unwrap();
    let tampered: Vec<String> = text
        .lines()
        .enumerate()
        .map(|(i, line)| {
            if i == 51 {
                let mut cells: Vec<String> = line.split(',').map(str::to_string).collect();
                cells[col] = "5".into();
                cells.join(",")
            } else {
                line.to_string()
            }
        })
        .collect();
    fs::write(&path, tampered.join("\n") + "\n").unwrap();
    let o = bench(&["verify", path.to_str().unwrap(), "--tol", "2e-2"]);
    assert_eq!(o.status.code(), Some(1), "{}", stdout(&o));
    assert!(stdout(&o).contains("fail"));
}
