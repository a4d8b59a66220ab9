use std::path::Path;
use std::process::{Command, Output};

fn rcsdid(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rcsdid"))
        .args(args)
        .env_remove("RCSDID_THREADS")
        .output()
        .expect("spawn rcsdid")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn emit_small(dir: &Path) -> std::path::PathBuf {
    let path = dir.join("d.csv");
    let out = rcsdid(&[
        "simulate",
        "--emit-data",
        path.to_str().unwrap(),
        "--kco",
        "6",
        "--periods",
        "8",
        "--tpre",
        "4",
        "--base-rc",
        "20",
        "--s-hi",
        "3",
        "--seed",
        "5",
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    path
}

#[test]
fn estimate_all_prints_three_rows() {
    let dir = tempfile::tempdir().unwrap();
    let path = emit_small(dir.path());
    let out = rcsdid(&["estimate", "--input", path.to_str().unwrap(), "--kco", "6", "--tpre", "4", "--method", "all"]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let text = stdout(&out);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 4, "{text}");
    assert!(lines[0].starts_with("method,tau_hat"));
    assert!(lines[1].starts_with("DID,") && lines[2].starts_with("RC_SDID,") && lines[3].starts_with("SDID,"));
}

#[test]
fn sidecar_supplies_layout_and_individual_path_agrees() {
    let dir = tempfile::tempdir().unwrap();
    let path = emit_small(dir.path());
    assert!(dir.path().join("d.layout.json").exists());
    let cell = rcsdid(&["estimate", "--input", path.to_str().unwrap(), "--method", "rcsdid"]);
    let ind = rcsdid(&["estimate", "--input", path.to_str().unwrap(), "--method", "rcsdid", "--individual"]);
    assert_eq!(cell.status.code(), Some(0), "{}", stderr(&cell));
    let tau = |o: &Output| -> f64 { stdout(o).lines().nth(1).unwrap().split(',').nth(1).unwrap().parse().unwrap() };
    assert!((tau(&cell) - tau(&ind)).abs() <= 1e-8);
}

#[test]
fn treated_column_matches_control_count() {
    let dir = tempfile::tempdir().unwrap();
    let path = emit_small(dir.path());
    let p = path.to_str().unwrap();
    let a = rcsdid(&["estimate", "--input", p, "--kco", "6", "--tpre", "4"]);
    let b = rcsdid(&["estimate", "--input", p, "--treated-col", "treated", "--tpre", "4"]);
    assert_eq!(b.status.code(), Some(0), "{}", stderr(&b));
    assert_eq!(stdout(&a), stdout(&b));
}

#[test]
fn weights_output_has_every_family() {
    let dir = tempfile::tempdir().unwrap();
    let path = emit_small(dir.path());
    let out_path = dir.path().join("w.csv");
    let out = rcsdid(&["weights", "--input", path.to_str().unwrap(), "--out", out_path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let text = std::fs::read_to_string(out_path).unwrap();
    for family in ["zeta", "sigma_hat", "omega0", "omega", "lambda0", "lambda", "nu", "unit_gap", "time_converged"] {
        assert!(text.lines().any(|l| l.starts_with(&format!("{family},"))), "missing {family}");
    }
    assert_eq!(text.lines().filter(|l| l.starts_with("omega,")).count(), 6);
    assert_eq!(text.lines().filter(|l| l.starts_with("nu,")).count(), 7 * 8);
}

#[test]
fn simulate_scale_table_has_expected_shape() {
    let out = rcsdid(&["simulate", "--table", "scale", "--reps", "3", "--seed", "42", "--kco", "5", "--periods", "6", "--tpre", "3"]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let text = stdout(&out);
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "scenario_label,estimator,mean_bias,sd,rmse,reps,meta_seed");
    assert_eq!(lines.count(), 8 * 3);
}

#[test]
fn simulate_is_deterministic_across_threads() {
    let args = ["simulate", "--table", "factors", "--reps", "4", "--kco", "5", "--periods", "6", "--tpre", "3", "--seed", "3"];
    let mut one = args.to_vec();
    one.extend(["--threads", "1"]);
    let mut three = args.to_vec();
    three.extend(["--threads", "3"]);
    let a = rcsdid(&one);
    let b = rcsdid(&three);
    assert_eq!(a.status.code(), Some(0), "{}", stderr(&a));
    assert_eq!(a.stdout, b.stdout);
}

#[test]
fn missing_input_exits_one_and_names_path() {
    let out = rcsdid(&["estimate", "--input", "definitely_missing.csv", "--kco", "3", "--tpre", "2"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("definitely_missing.csv"), "{}", stderr(&out));
}

#[test]
fn conflicting_flags_exit_one() {
    let out = rcsdid(&["estimate", "--input", "x.csv", "--kco", "3", "--treated-col", "treated", "--tpre", "2"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn unknown_flag_exits_one() {
    let out = rcsdid(&["simulate", "--bogus"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn one_pre_period_allows_only_did() {
    // SDiD weights need two pre-periods; that is an input error.
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("tiny.csv");
    std::fs::write(&path, "group,time,outcome\n1,1,10\n1,2,12\n2,1,20\n2,2,25\n").unwrap();
    let did = rcsdid(&["estimate", "--input", path.to_str().unwrap(), "--kco", "1", "--tpre", "1", "--method", "did"]);
    assert_eq!(did.status.code(), Some(0));
    let line = stdout(&did).lines().nth(1).unwrap().to_string();
    let tau: f64 = line.strip_prefix("DID,").unwrap().split(',').next().unwrap().parse().unwrap();
    assert!((tau - 3.0).abs() < 1e-12, "{line}");
    let sdid = rcsdid(&["estimate", "--input", path.to_str().unwrap(), "--kco", "1", "--tpre", "1", "--method", "sdid"]);
    assert_eq!(sdid.status.code(), Some(1), "{}", stderr(&sdid));
}

#[test]
fn solver_failure_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let path = emit_small(dir.path());
    let out = rcsdid(&[
        "estimate",
        "--input",
        path.to_str().unwrap(),
        "--max-iter",
        "1",
        "--require-convergence",
    ]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
}

#[test]
fn failed_run_leaves_no_output_file() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("bad.csv");
    std::fs::write(&data, "group,time,outcome\n1,1,10\n1,2,oops\n2,1,20\n2,2,25\n").unwrap();
    let out_path = dir.path().join("result.csv");
    let out = rcsdid(&[
        "estimate",
        "--input",
        data.to_str().unwrap(),
        "--kco",
        "1",
        "--tpre",
        "1",
        "--out",
        out_path.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!out_path.exists());
    let leftovers: Vec<_> = std::fs::read_dir(dir.path()).unwrap().collect();
    assert_eq!(leftovers.len(), 1);
}

#[test]
fn config_file_with_flag_override() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("scenario.json");
    std::fs::write(&cfg, r#"{"k_co": 4, "t": 6, "t_pre": 3, "base_rc": 10, "seed": 1}"#).unwrap();
    let a = rcsdid(&["simulate", "--config", cfg.to_str().unwrap(), "--reps", "2"]);
    let b = rcsdid(&["simulate", "--config", cfg.to_str().unwrap(), "--reps", "2", "--seed", "2"]);
    assert_eq!(a.status.code(), Some(0), "{}", stderr(&a));
    assert_ne!(a.stdout, b.stdout);
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"k_co": 4, "nonsense": 1}"#).unwrap();
    let c = rcsdid(&["simulate", "--config", bad.to_str().unwrap(), "--reps", "2"]);
    assert_eq!(c.status.code(), Some(1));
}

#[test]
fn help_documents_flags() {
    let out = rcsdid(&["simulate", "--help"]);
    assert_eq!(out.status.code(), Some(0));
    let text = stdout(&out);
    for flag in ["--table", "--reps", "--meta-reps", "--seed", "--config", "--out", "--format", "--threads", "--redraw-counts"] {
        assert!(text.contains(flag), "missing {flag}");
    }
    let est = stdout(&rcsdid(&["estimate", "--help"]));
    for flag in ["--method", "--input", "--kco", "--tpre", "--treated-col", "--out", "--tol", "--max-iter"] {
        assert!(est.contains(flag), "missing {flag}");
    }
}
