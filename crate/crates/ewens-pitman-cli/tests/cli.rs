//! End-to-end runs of the `ep` binary: output shapes, determinism, exit codes.

use std::io::Write as _;
use std::path::PathBuf;
use std::process::{Command, Output, Stdio};

fn ep() -> Command {
    Command::new(env!("CARGO_BIN_EXE_ep"))
}

fn run(args: &[&str]) -> Output {
    ep().args(args).output().expect("spawn ep")
}

fn run_ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "ep {:?} failed: {}",
        args,
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn json(args: &[&str]) -> serde_json::Value {
    serde_json::from_str(run_ok(args).trim()).expect("stdout is one JSON object")
}

fn tmp_path(name: &str) -> PathBuf {
    std::env::temp_dir().join(format!("ep-cli-{}-{name}", std::process::id()))
}

#[test]
fn moments_known_value_and_backend_agreement() {
    let v = json(&[
        "moments", "--stat", "mean-K", "--n", "2", "--alpha", "1/2", "--theta", "1/2",
        "--backend", "exact",
    ]);
    let got = v["value"].as_f64().unwrap();
    assert!((got - 5.0 / 3.0).abs() < 1e-15, "{got}");
    assert_eq!(v["backend"], "exact");
    assert_eq!(v["n"], 2);
    assert!(v["r"].is_null());

    let args = |backend: &'static str| {
        vec![
            "moments", "--stat", "joint", "--n", "8", "--alpha", "0.5", "--theta", "2",
            "--r", "2", "--p", "2", "--q", "-1", "--backend", backend,
        ]
    };
    let e = json(&args("exact"))["value"].as_f64().unwrap();
    let f = json(&args("float"))["value"].as_f64().unwrap();
    assert!((e - f).abs() <= 1e-12 * e.abs().max(1.0), "exact {e} vs float {f}");
}

#[test]
fn moments_missing_parameter_is_a_usage_error() {
    let out = run(&[
        "moments", "--stat", "joint", "--n", "4", "--alpha", "0.5", "--theta", "0.5",
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("needs --r"));
}

#[test]
fn simulate_is_seed_deterministic() {
    let args = [
        "simulate", "--alpha", "0.5", "--theta", "0.5", "--n", "40", "--seed", "7", "--d", "3",
    ];
    let first = run_ok(&args);
    let second = run_ok(&args);
    assert_eq!(first, second);
    assert!(first.starts_with("n,K,K1,K2,K3\n"));
    assert!(first.lines().last().unwrap().starts_with("40,"));

    let other = run_ok(&[
        "simulate", "--alpha", "0.5", "--theta", "0.5", "--n", "40", "--seed", "8", "--d", "3",
    ]);
    assert_ne!(first, other);
}

#[test]
fn estimate_round_trips_an_exported_state() {
    let fof = tmp_path("fof.txt");
    let fof_s = fof.to_str().unwrap();
    run_ok(&[
        "simulate", "--alpha", "0.6", "--theta", "0.5", "--n", "5000", "--seed", "11",
        "--checkpoints", "final", "--emit-counts", fof_s, "--out",
        tmp_path("traj.csv").to_str().unwrap(),
    ]);

    let mut n = 0u64;
    let mut k = 0u64;
    for line in std::fs::read_to_string(&fof).unwrap().lines() {
        let (r, c) = line.split_once(',').unwrap();
        let (r, c): (u64, u64) = (r.parse().unwrap(), c.parse().unwrap());
        n += r * c;
        k += c;
    }
    assert_eq!(n, 5000);

    let v = json(&["estimate", "--input", fof_s]);
    assert_eq!(v["n"].as_u64(), Some(5000));
    assert_eq!(v["K"].as_u64(), Some(k));
    let ci_low = v["ci_low"].as_f64().unwrap();
    let ci_high = v["ci_high"].as_f64().unwrap();
    let hat = v["alpha_hat"].as_f64().unwrap();
    assert!(ci_low <= hat && hat <= ci_high);
    let _ = std::fs::remove_file(&fof);
    let _ = std::fs::remove_file(tmp_path("traj.csv"));
}

#[test]
fn estimate_reads_stdin_and_reports_line_numbers() {
    let mut child = ep()
        .args(["estimate", "--input", "-"])
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    child
        .stdin
        .take()
        .unwrap()
        .write_all(b"# frequency of frequencies\n1,3\n2,2\n")
        .unwrap();
    let out = child.wait_with_output().unwrap();
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["n"].as_u64(), Some(7));
    assert_eq!(v["K"].as_u64(), Some(5));
    assert!((v["alpha_hat"].as_f64().unwrap() - 0.6).abs() < 1e-15);

    let mut child = ep()
        .args(["estimate", "--input", "-"])
        .stdin(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    child.stdin.take().unwrap().write_all(b"1,3\nbogus\n").unwrap();
    let out = child.wait_with_output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));
}

#[test]
fn estimate_rejects_duplicate_sizes_and_empty_input() {
    let dup = tmp_path("dup.txt");
    std::fs::write(&dup, "1,3\n1,4\n").unwrap();
    let out = run(&["estimate", "--input", dup.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("listed twice"));
    let _ = std::fs::remove_file(&dup);

    let empty = tmp_path("empty.txt");
    std::fs::write(&empty, "# nothing\n").unwrap();
    let out = run(&["estimate", "--input", empty.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let _ = std::fs::remove_file(&empty);
}

#[test]
fn oracle_check_passes_and_reports_each_check() {
    let v = json(&["oracle-check", "--n-max", "4"]);
    assert_eq!(v["pass"], true);
    let checks = v["checks"].as_array().unwrap();
    assert_eq!(checks.len(), 10);
    for c in checks {
        assert_eq!(c["pass"], true, "{}", c["name"]);
    }
    let names: Vec<&str> = checks.iter().map(|c| c["name"].as_str().unwrap()).collect();
    assert!(names.contains(&"pmf_block_count"));
    assert!(names.contains(&"covariance_transport_identity"));

    let out = run(&["oracle-check", "--n-max", "40"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn verify_martingale_passes_and_dumps_diagnostics() {
    let qv = tmp_path("qv.csv");
    let v = json(&[
        "verify-martingale", "--alpha", "0.5", "--theta", "0.8", "--states", "30",
        "--max-order", "4", "--seed", "2", "--qv-csv", qv.to_str().unwrap(), "--qv-n", "128",
    ]);
    assert_eq!(v["pass"], true);
    assert!(v["max_rel_gap"].as_f64().unwrap() < 1e-10);
    let dump = std::fs::read_to_string(&qv).unwrap();
    assert!(dump.starts_with("n,r,S,M_scaled,qv_normalized\n"));
    assert!(dump.lines().count() > 4);
    let _ = std::fs::remove_file(&qv);

    let out = run(&[
        "verify-martingale", "--alpha", "0.5", "--theta", "0.8", "--states", "10",
        "--max-order", "3", "--tol", "1e-18",
    ]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn verify_cov_small_run_passes_with_allowance() {
    let v = json(&[
        "verify-cov", "--alpha", "0.5", "--theta", "1", "--n", "400", "--replicates", "150",
        "--d", "2", "--seed", "1", "--threads", "2", "--se-mult", "6",
    ]);
    assert_eq!(v["pass"], true);
    assert_eq!(v["limit"][0][0].as_f64(), Some(0.25));
    assert!(v["worst_ratio"].as_f64().unwrap() < 1.0);
}

#[test]
fn ci_coverage_is_thread_count_invariant_and_checks_windows() {
    let base = [
        "ci-coverage", "--alpha", "0.5", "--theta", "1", "--n", "300", "--replicates", "80",
        "--seed", "5",
    ];
    let mut one = base.to_vec();
    one.extend(["--threads", "1"]);
    let mut three = base.to_vec();
    three.extend(["--threads", "3"]);
    let a = json(&one);
    let b = json(&three);
    assert_eq!(a["cov_q"], b["cov_q"]);
    assert_eq!(a["ci_coverage"], b["ci_coverage"]);
    let cov = a["ci_coverage"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&cov));

    let mut failing = base.to_vec();
    failing.extend(["--expect-coverage", "0.0,0.0001"]);
    let out = run(&failing);
    assert_eq!(out.status.code(), Some(1));
    let v: serde_json::Value =
        serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["checks"][0]["name"], "ci_coverage_window");
    assert_eq!(v["checks"][0]["pass"], false);
}

#[test]
fn ci_coverage_dumps_replicate_rows() {
    let path = tmp_path("rows.csv");
    run_ok(&[
        "ci-coverage", "--alpha", "0.5", "--theta", "1", "--n", "200", "--replicates", "40",
        "--seed", "9", "--d", "2", "--threads", "1", "--dump-replicates", path.to_str().unwrap(),
    ]);
    let dump = std::fs::read_to_string(&path).unwrap();
    assert!(dump.starts_with("alpha_hat,Q1,Q2\n"));
    assert_eq!(dump.lines().count(), 41);
    let _ = std::fs::remove_file(&path);
}

#[test]
fn neg_moments_spread_verdict_controls_exit() {
    let v = json(&[
        "neg-moments", "--alpha", "0.5", "--theta", "0.5", "--targets", "50,150",
        "--replicates", "80", "--seed", "4", "--threads", "2", "--max-spread", "10",
    ]);
    assert_eq!(v["pass"], true);
    assert!(v["spread"].as_f64().unwrap() >= 1.0);

    let out = run(&[
        "neg-moments", "--alpha", "0.5", "--theta", "0.5", "--targets", "50,150",
        "--replicates", "80", "--seed", "4", "--max-spread", "1.0000001",
    ]);
    assert_eq!(out.status.code(), Some(1));

    // q outside the boundedness window is a parameter error
    let out = run(&[
        "neg-moments", "--alpha", "0.5", "--theta", "0.5", "--q", "4", "--targets", "50",
        "--replicates", "10",
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_required_flag_is_a_usage_error() {
    let out = run(&["simulate", "--theta", "0.5", "--n", "10"]);
    assert_eq!(out.status.code(), Some(2));
}
