use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs").join(name)
}

fn weaknull(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_weaknull"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn read_json(path: PathBuf) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn verify_fails_on_stated_bounds_and_passes_sharp() {
    let dir = tempfile::tempdir().unwrap();
    let o = weaknull(&["verify"], dir.path());
    assert_eq!(code(&o), 2);
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("FAIL b0_bcal_bound_stated"), "{stdout}");
    assert!(stdout.contains("PASS b0_bcal_bound_sharp"), "{stdout}");
    assert_eq!(code(&weaknull(&["verify", "--sharp"], dir.path())), 0);
    let report = read_json(dir.path().join("verify.json"));
    assert_eq!(report["passed"], true);
}

#[test]
fn injected_fault_is_caught() {
    let dir = tempfile::tempdir().unwrap();
    let o = weaknull(&["verify", "--sharp", "--inject-fault", "flip-bcal-sign"], dir.path());
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stdout).contains("FAIL b0_bcal_bound_sharp"));
}

#[test]
fn analyze_exit_codes_follow_classification() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config("null_form.json");
    let o = weaknull(&["analyze", "--config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(code(&o), 0);
    assert_eq!(read_json(dir.path().join("analyze.json"))["classification"], "Null");

    let cfg = config("scalar_riccati.json");
    let o = weaknull(&["analyze", "--config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(code(&o), 3);
    let t = read_json(dir.path().join("analyze.json"))["earliest_blowup_t"].as_f64().unwrap();
    assert!((t - 2.0 / (1.0 + std::f64::consts::E)).abs() < 1e-3, "{t}");
}

#[test]
fn evolve_output_is_deterministic() {
    let cfg = config("condition_h.json");
    let cfg = cfg.to_str().unwrap();
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let c = tempfile::tempdir().unwrap();
    assert_eq!(code(&weaknull(&["evolve", "--config", cfg, "--seed", "7"], a.path())), 0);
    assert_eq!(code(&weaknull(&["evolve", "--config", cfg, "--seed", "7"], b.path())), 0);
    assert_eq!(code(&weaknull(&["evolve", "--config", cfg, "--seed", "7", "--threads", "1"], c.path())), 0);
    for name in ["evolve.json", "diagnostics.csv", "snapshots.json", "snapshots/snapshot_00000.csv"] {
        let x = std::fs::read(a.path().join(name)).unwrap();
        assert_eq!(x, std::fs::read(b.path().join(name)).unwrap(), "{name} differs between runs");
        assert_eq!(x, std::fs::read(c.path().join(name)).unwrap(), "{name} differs with one thread");
    }
    let report = read_json(a.path().join("evolve.json"));
    assert_eq!(report["completed"], true);
    assert!(report["bounds"].as_array().unwrap().iter().all(|b| b["passed"] == true));
}

#[test]
fn config_errors_exit_one_with_json_path() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(
        &bad,
        r#"{"schema_version": 1, "coefficients": {"kind": "zero", "n_fields": 1}, "solver": {"n_rho": 64, "dt": 0.1}}"#,
    )
    .unwrap();
    let o = weaknull(&["evolve", "--config", bad.to_str().unwrap()], dir.path());
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("solver.dt"));

    let o = weaknull(&["evolve"], dir.path());
    assert_eq!(code(&o), 1);

    let cfg = config("condition_h.json");
    let o = weaknull(&["oracle", "--config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(code(&o), 1, "oracle needs an exact solution");
}

#[test]
fn convergence_separates_resolved_and_aliased_runs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config("free_wave.json");
    let o = weaknull(&["convergence", "--config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    let report = read_json(dir.path().join("convergence.json"));
    assert!(report["time_orders"].as_array().unwrap().iter().all(|p| p.as_f64().unwrap() > 3.5));

    let cfg = config("under_resolved.json");
    let o = weaknull(&["convergence", "--config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stdout).contains("aliasing"));

    let cfg = config("zero.json");
    let o = weaknull(&["convergence", "--config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(code(&o), 0);
    assert_eq!(read_json(dir.path().join("convergence.json"))["time_exact"], true);
}

#[test]
fn oracle_matches_exact_free_wave() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config("free_wave.json");
    let o = weaknull(&["oracle", "--config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(code(&o), 0);
    let e = read_json(dir.path().join("oracle.json"))["max_error"].as_f64().unwrap();
    assert!(e < 1e-6, "{e}");
}
