use std::path::Path;
use std::process::{Command, Output};

fn cohdec(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cohdec"))
        .args(args)
        .env("RUST_LOG", "error")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Value of `key` in a `--format kv` report.
fn kv(o: &Output, key: &str) -> String {
    let prefix = format!("{key}=");
    stdout(o)
        .lines()
        .find_map(|l| l.strip_prefix(&prefix).map(str::to_string))
        .unwrap_or_else(|| panic!("no `{key}` in\n{}", stdout(o)))
}

fn kv_f64(o: &Output, key: &str) -> f64 {
    kv(o, key).parse().unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn capacity_single_mode() {
    let o = cohdec(&["capacity", "--s", "3", "--n", "0", "--format", "kv"]);
    assert_eq!(o.status.code(), Some(0));
    assert!((kv_f64(&o, "mi_nats") - 4f64.ln()).abs() < 1e-6);
    assert!((kv_f64(&o, "mi_bits") - 2.0).abs() < 1e-6);
    assert_eq!(kv(&o, "config.s"), "3");
}

#[test]
fn capacity_without_signal_is_zero() {
    let o = cohdec(&["capacity", "--s", "0", "--n", "5", "--format", "kv"]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(kv_f64(&o, "mi_nats"), 0.0);
}

#[test]
fn capacity_from_matrix_files() {
    let dir = tempfile::tempdir().unwrap();
    let s = write(dir.path(), "s.txt", "1 0\n0 3\n");
    let n = write(dir.path(), "n.txt", "0 0\n0 1\n");
    let o = cohdec(&["capacity", "--s-file", &s, "--n-file", &n, "--format", "kv"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!((kv_f64(&o, "mi_nats") - 5f64.ln()).abs() < 1e-6);
    assert!((kv_f64(&o, "mode0.mi_nats") - 2f64.ln()).abs() < 1e-6);
    assert!((kv_f64(&o, "mode1.mi_nats") - 2.5f64.ln()).abs() < 1e-6);
}

#[test]
fn capacity_rejects_indefinite_matrix() {
    let dir = tempfile::tempdir().unwrap();
    let s = write(dir.path(), "s.txt", "1 2\n2 1\n");
    let o = cohdec(&["capacity", "--s-file", &s]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("eigenvalue -1"), "{}", stderr(&o));
}

#[test]
fn capacity_reports_bad_matrix_token() {
    let dir = tempfile::tempdir().unwrap();
    let s = write(dir.path(), "s.txt", "1 0\n0 x3\n");
    let o = cohdec(&["capacity", "--s-file", &s]);
    assert_eq!(o.status.code(), Some(65));
    assert!(stderr(&o).contains("line 2"));
}

#[test]
fn capacity_requires_signal() {
    assert_eq!(cohdec(&["capacity", "--n", "1"]).status.code(), Some(64));
}

#[test]
fn verify_default_passes() {
    let o = cohdec(&["verify", "--format", "kv"]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    assert_eq!(kv(&o, "status"), "pass");
    assert_eq!(kv(&o, "config.s"), "1");
    assert_eq!(kv(&o, "config.n"), "0.5");
    for check in [
        "completeness",
        "first_moment",
        "stationarity.coherent",
        "lagrange_trace",
        "identity",
        "identity_algebraic",
    ] {
        assert_eq!(kv(&o, &format!("check.{check}.status")), "pass", "{check}");
    }
}

#[test]
fn verify_squeezed_family_fails() {
    let o = cohdec(&["verify", "--perturb", "squeeze:1.5", "--format", "kv"]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(kv(&o, "check.stationarity.squeeze.status"), "fail");
    assert_eq!(kv(&o, "check.stationarity.coherent.status"), "pass");
    assert!(kv_f64(&o, "perturbation_ratio") > 5.0);
}

#[test]
fn verify_without_signal_is_trivial() {
    let o = cohdec(&["verify", "--s", "0", "--format", "kv"]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(kv_f64(&o, "check.stationarity.coherent.value"), 0.0);
    assert_eq!(kv_f64(&o, "check.identity.value"), 0.0);
    assert_eq!(kv_f64(&o, "mi_nats"), 0.0);
}

#[test]
fn verify_budget_exceeded() {
    let o = cohdec(&["verify", "--s", "1,1", "--n", "0"]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}

#[test]
fn verify_from_config_file_with_override() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "run.cfg",
        "# verification run\ncommand = verify\ns = 1\nn = 0.5\nformat = kv\nperturb = offset:0.3\n",
    );
    let o = cohdec(&["--config", &cfg, "--n", "0"]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(kv(&o, "config.n"), "0");
    assert_eq!(kv(&o, "check.stationarity.offset.status"), "fail");
}

#[test]
fn config_errors() {
    let dir = tempfile::tempdir().unwrap();
    let unknown = write(dir.path(), "a.cfg", "s = 1\ncolour = red\n");
    let o = cohdec(&["capacity", "--config", &unknown]);
    assert_eq!(o.status.code(), Some(64));
    assert!(stderr(&o).contains("unknown key `colour`"));
    let malformed = write(dir.path(), "b.cfg", "s = 1\nn 2\n");
    let o = cohdec(&["capacity", "--config", &malformed]);
    assert_eq!(o.status.code(), Some(65));
    assert!(stderr(&o).contains("line 2"));
    let missing = dir.path().join("none.cfg");
    assert_eq!(
        cohdec(&["capacity", "--config", missing.to_str().unwrap()])
            .status
            .code(),
        Some(74)
    );
}

#[test]
fn simulate_estimates_capacity() {
    let o = cohdec(&[
        "simulate", "--s", "3", "--n", "0", "--count", "100000", "--seed", "7", "--format", "kv",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!((kv_f64(&o, "mi_estimate") - 4f64.ln()).abs() < 0.03);
    assert!(kv_f64(&o, "conditional_cov_deviation") < 0.03);
}

#[test]
fn simulate_rejects_zero_count() {
    let o = cohdec(&["simulate", "--s", "3", "--count", "0", "--seed", "1"]);
    assert_eq!(o.status.code(), Some(64));
}

#[test]
fn simulate_requires_seed() {
    assert_eq!(
        cohdec(&["simulate", "--s", "3", "--count", "1000"]).status.code(),
        Some(64)
    );
}

#[test]
fn simulate_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    for path in [&a, &b] {
        let o = cohdec(&[
            "simulate",
            "--s",
            "1,2",
            "--n",
            "0.5",
            "--count",
            "5000",
            "--seed",
            "11",
            "--output",
            path.to_str().unwrap(),
        ]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    }
    let a = std::fs::read(a).unwrap();
    assert_eq!(a, std::fs::read(b).unwrap());
    let text = String::from_utf8(a).unwrap();
    assert!(text.starts_with("theta0_re,theta0_im,theta1_re,theta1_im,beta0_re,beta0_im,beta1_re,beta1_im\n"));
    assert_eq!(text.lines().count(), 5001);
}

#[test]
fn simulate_unwritable_output() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("missing").join("x.csv");
    let o = cohdec(&[
        "simulate",
        "--s",
        "1",
        "--count",
        "1000",
        "--seed",
        "1",
        "--output",
        path.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(74));
}

#[test]
fn rate_flat_band() {
    // hν/θ = ln 2 across a band of width 1 far above zero, so n ≈ 1 throughout
    let dir = tempfile::tempdir().unwrap();
    let nu0 = 1e6;
    let rows: String = (0..=10).map(|k| format!("{},1\n", nu0 + k as f64 / 10.0)).collect();
    let profile = write(dir.path(), "flat.csv", &format!("nu,s_nu\n{rows}"));
    let theta = ((nu0 + 0.5) / 2f64.ln()).to_string();
    let o = cohdec(&["rate", "--profile", &profile, "--theta", &theta, "--format", "kv"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!((kv_f64(&o, "rate") - 1.5f64.ln()).abs() < 1e-6);
}

#[test]
fn rate_classical_gap() {
    let dir = tempfile::tempdir().unwrap();
    let rows: String = (0..=100).map(|k| format!("{},1\n", 1.0 + k as f64 / 100.0)).collect();
    let profile = write(dir.path(), "band.csv", &format!("nu,s_nu\n{rows}"));
    let o = cohdec(&["rate", "--profile", &profile, "--theta", "1000", "--format", "kv"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(kv_f64(&o, "classical.relative_gap") < 0.01);
}

#[test]
fn rate_malformed_row() {
    let dir = tempfile::tempdir().unwrap();
    let profile = write(dir.path(), "bad.csv", "nu,s_nu\n1,1\n2,oops\n");
    let o = cohdec(&["rate", "--profile", &profile, "--theta", "1"]);
    assert_eq!(o.status.code(), Some(65));
    assert!(stderr(&o).contains("line 3"), "{}", stderr(&o));
}

#[test]
fn rate_empty_band() {
    let dir = tempfile::tempdir().unwrap();
    let profile = write(dir.path(), "empty.csv", "nu,s_nu\n");
    assert_eq!(
        cohdec(&["rate", "--profile", &profile, "--theta", "1"]).status.code(),
        Some(64)
    );
}

#[test]
fn help_exits_cleanly() {
    let o = cohdec(&["--help"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("verify"));
}
