use std::path::PathBuf;
use std::process::{Command, Output};

fn config(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

fn philap(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_philap")).args(args).output().expect("binary runs")
}

fn run_in(dir: &tempfile::TempDir, cmd: &str, cfg: &str, extra: &[&str]) -> Output {
    let cfg = config(cfg);
    let mut args = vec![cmd, cfg.to_str().unwrap(), "--out-dir", dir.path().to_str().unwrap()];
    args.extend_from_slice(extra);
    philap(&args)
}

fn column(csv: &str, k: usize) -> Vec<f64> {
    csv.lines().skip(1).map(|l| l.split(',').nth(k).unwrap().parse().unwrap()).collect()
}

#[test]
fn bad_input_exits_one() {
    assert_eq!(philap(&["analyze", "/nonexistent/x.cfg"]).status.code(), Some(1));
    assert_eq!(philap(&["frobnicate"]).status.code(), Some(1));
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.cfg");
    std::fs::write(&bad, "[homeo]\nphi = \"x +\"\npsi1 = \"y\"\npsi2 = \"y\"\n[nonlinearity]\nf = \"s\"\n").unwrap();
    assert_eq!(philap(&["analyze", bad.to_str().unwrap()]).status.code(), Some(1));
    assert_eq!(philap(&["--help"]).status.code(), Some(0));
}

#[test]
fn analyze_reports_example_profile() {
    let dir = tempfile::tempdir().unwrap();
    assert!(run_in(&dir, "analyze", "three_solutions.cfg", &[]).status.success());
    let report = std::fs::read_to_string(dir.path().join("three_solutions.analyze.report.txt")).unwrap();
    assert!(report.contains("gamma1 = 2.9687500000000000e-1"));
    assert!(report.contains("gamma2 = 7.6562500000000000e-1"));
    assert!(report.contains("gamma = 5.3125000000000000e-1"));
    let csv = std::fs::read_to_string(dir.path().join("three_solutions.rcurves.csv")).unwrap();
    assert!(csv.starts_with("m,R1,R2,f_lower,f_upper\n"));
    let (r1, r2) = (column(&csv, 1), column(&csv, 2));
    assert!(r1.iter().zip(&r2).all(|(a, b)| b < a));
}

#[test]
fn quadratic_branch_decreases() {
    let dir = tempfile::tempdir().unwrap();
    assert!(run_in(&dir, "branch", "quadratic.cfg", &["--mgrid-lo", "0.01", "--mgrid-hi", "100", "--mgrid-per-decade", "8"]).status.success());
    let csv = std::fs::read_to_string(dir.path().join("quadratic.branch.csv")).unwrap();
    let lambda = column(&csv, 1);
    assert_eq!(lambda.len(), 33);
    assert!(lambda.windows(2).all(|w| w[1] < w[0]));
}

#[test]
fn solve_at_zero_writes_empty_index() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(&dir, "solve", "linear.cfg", &["--lambda", "0"]);
    assert_eq!(out.status.code(), Some(0));
    let csv = std::fs::read_to_string(dir.path().join("linear.solutions.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1);
}

#[test]
fn solve_requires_lambda() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run_in(&dir, "solve", "quadratic.cfg", &[]).status.code(), Some(1));
}

#[test]
fn solve_output_is_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [&a, &b] {
        assert!(run_in(d, "solve", "sqrt.cfg", &[]).status.success());
    }
    for name in ["sqrt.solutions.csv", "sqrt.solution_0.csv"] {
        let x = std::fs::read(a.path().join(name)).unwrap();
        let y = std::fs::read(b.path().join(name)).unwrap();
        assert_eq!(x, y, "{name}");
    }
    let csv = std::fs::read_to_string(a.path().join("sqrt.solutions.csv")).unwrap();
    let norm = column(&csv, 2);
    assert_eq!(norm.len(), 1);
    assert!((norm[0] - 0.012556345121604762).abs() < 1e-9);
}

#[test]
fn reduce_writes_loadable_config() {
    let dir = tempfile::tempdir().unwrap();
    assert!(run_in(&dir, "reduce", "annulus.cfg", &[]).status.success());
    let reduced = dir.path().join("annulus.reduced.cfg");
    assert!(philap(&["analyze", reduced.to_str().unwrap(), "--out-dir", dir.path().to_str().unwrap()]).status.success());
}

#[test]
fn selftest_passes() {
    let out = philap(&["selftest"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(!text.contains("FAIL"));
}
