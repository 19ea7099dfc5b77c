use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn revstress(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_revstress"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn read_json(path: impl AsRef<Path>) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

/// Synthetic balance sheets plus reconstructed exposures in a fresh directory.
fn fixture(banks: usize) -> (TempDir, PathBuf, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let out = s(dir.path()).to_owned();
    let n = banks.to_string();
    let synth = revstress(&["synth", "--banks", &n, "--seed", "5", "--out", &out]);
    assert!(synth.status.success(), "{}", stderr(&synth));
    let bs = dir.path().join("balance_sheets.csv");
    let rec = revstress(&["reconstruct", "--balance-sheets", s(&bs), "--out", &out]);
    assert!(rec.status.success(), "{}", stderr(&rec));
    let ex = dir.path().join("exposures.csv");
    (dir, bs, ex)
}

fn report_files(dir: &Path, prefix: &str) -> (PathBuf, PathBuf) {
    let mut csv = None;
    let mut meta = None;
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        let name = path.file_name().unwrap().to_str().unwrap().to_owned();
        if name.starts_with(&format!("{prefix}_")) {
            if name.ends_with(".meta.json") {
                meta = Some(path);
            } else if name.ends_with(".csv") {
                csv = Some(path);
            }
        }
    }
    (csv.expect("report csv"), meta.expect("report meta"))
}

#[test]
fn reconstruct_writes_matrix_and_meta() {
    let (dir, _, ex) = fixture(6);
    assert!(ex.exists());
    let meta = read_json(dir.path().join("exposures.meta.json"));
    assert_eq!(meta["converged"], Value::Bool(true));
    assert_eq!(meta["config"]["ras_tolerance"], 1e-10);
}

#[test]
fn tolerance_flag_overrides_config() {
    let (dir, bs, _) = fixture(5);
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"ras_tolerance": 1e-6}"#).unwrap();
    let out = revstress(&[
        "--config", s(&cfg), "reconstruct", "--balance-sheets", s(&bs),
        "--out", s(dir.path()), "--tolerance", "1e-12",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let meta = read_json(dir.path().join("exposures.meta.json"));
    assert_eq!(meta["config"]["ras_tolerance"], 1e-12);
    assert!(meta["residual"].as_f64().unwrap() <= 1e-12);
}

#[test]
fn infeasible_marginals_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let bs = dir.path().join("bs.csv");
    std::fs::write(
        &bs,
        "id,name,equity,interbank_assets,interbank_liabilities,total_liabilities\n\
         0,A,1,100,10,\n1,B,1,1,46,\n2,C,1,1,46,\n",
    )
    .unwrap();
    let out = revstress(&["reconstruct", "--balance-sheets", s(&bs), "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("a_i ≤ Σ_{j≠i} l_j"), "{}", stderr(&out));
}

#[test]
fn ras_iteration_cap_exits_3() {
    let (dir, bs, _) = fixture(8);
    let out = revstress(&[
        "reconstruct", "--balance-sheets", s(&bs), "--out", s(dir.path()), "--max-iterations", "1",
    ]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn one_step_solve_costs_n_loss_squared() {
    let (dir, bs, ex) = fixture(7);
    let out = revstress(&[
        "solve", "--balance-sheets", s(&bs), "--exposures", s(&ex), "--out", s(dir.path()),
        "--horizon", "1", "--loss", "0.1",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    let k: f64 = text
        .lines()
        .find_map(|l| l.strip_prefix("K = "))
        .unwrap()
        .parse()
        .unwrap();
    assert!((k - 7.0 * 0.01).abs() <= 1e-12, "{k}");
    let solution = read_json(dir.path().join("solution.json"));
    assert!((solution["K"].as_f64().unwrap() - k).abs() <= 1e-15);
    assert_eq!(solution["K_i"].as_array().unwrap().len(), 7);
    let csv = std::fs::read_to_string(dir.path().join("concentration.csv")).unwrap();
    assert!(csv.starts_with("bank_id,K_i,share,standardized,rank"));
    assert_eq!(csv.lines().count(), 8);
    let meta = read_json(dir.path().join("solution.meta.json"));
    assert_eq!(meta["beta"], 1.0);
}

#[test]
fn lambda_max_records_calibrated_beta() {
    let (dir, bs, ex) = fixture(6);
    let out = revstress(&[
        "solve", "--balance-sheets", s(&bs), "--exposures", s(&ex), "--out", s(dir.path()),
        "--lambda-max", "1.5",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let meta = read_json(dir.path().join("solution.meta.json"));
    let beta = meta["beta"].as_f64().unwrap();
    assert!(beta > 0.0 && beta != 1.0);
    assert!((meta["lambda_max"].as_f64().unwrap() - 1.5).abs() <= 1e-9);
    assert_eq!(meta["config"]["lambda_max"], 1.5);
}

#[test]
fn missing_exposures_exit_2_with_path() {
    let (dir, bs, _) = fixture(4);
    let missing = dir.path().join("no_such_exposures.csv");
    let out = revstress(&["solve", "--balance-sheets", s(&bs), "--exposures", s(&missing)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("no_such_exposures.csv"), "{}", stderr(&out));
}

#[test]
fn bad_config_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"horizon": 0}"#).unwrap();
    assert_eq!(revstress(&["--config", s(&cfg), "synth"]).status.code(), Some(2));
    std::fs::write(&cfg, r#"{"not_a_key": true}"#).unwrap();
    assert_eq!(revstress(&["--config", s(&cfg), "synth"]).status.code(), Some(2));
}

#[test]
fn sweep_three_rows_and_empty_grid() {
    let (dir, bs, ex) = fixture(6);
    let out_dir = dir.path().join("sweep");
    let out = revstress(&[
        "sweep", "--balance-sheets", s(&bs), "--exposures", s(&ex), "--out", s(&out_dir),
        "--lambda-max-values", "0.5,1,1.5", "--horizons", "20", "--loss-levels", "0.1",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let (csv, meta) = report_files(&out_dir, "sweep");
    let body = std::fs::read_to_string(csv).unwrap();
    assert_eq!(body.lines().count(), 4);
    assert!(body.starts_with("lambda_max,T,loss,beta,K,IPR,error"));
    let meta = read_json(meta);
    assert_eq!(meta["config"]["lambda_max_values"], serde_json::json!([0.5, 1.0, 1.5]));

    let cfg = dir.path().join("empty.json");
    std::fs::write(&cfg, r#"{"horizons": []}"#).unwrap();
    let out = revstress(&[
        "--config", s(&cfg), "sweep", "--balance-sheets", s(&bs), "--exposures", s(&ex),
        "--out", s(&out_dir),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn seeded_runs_are_byte_identical() {
    let (dir, bs, ex) = fixture(8);
    let mut bodies = Vec::new();
    for run in ["a", "b"] {
        let out_dir = dir.path().join(run);
        for cmd in ["selective", "robustness"] {
            let out = revstress(&[
                cmd, "--balance-sheets", s(&bs), "--exposures", s(&ex), "--out", s(&out_dir),
                "--seed", "11", "--lambda-max", "1.5", "--horizon", "10", "--threads", "3",
            ]);
            assert!(out.status.success(), "{cmd}: {}", stderr(&out));
        }
        let mut run_bodies = Vec::new();
        for cmd in ["selective", "robustness"] {
            let (csv, _) = report_files(&out_dir, cmd);
            run_bodies.push(std::fs::read(csv).unwrap());
        }
        bodies.push(run_bodies);
    }
    assert_eq!(bodies[0], bodies[1]);
}

#[test]
fn policy_report_has_row_per_lambda_and_phi() {
    let (dir, bs, ex) = fixture(6);
    let out_dir = dir.path().join("policy");
    let out = revstress(&[
        "policy", "--balance-sheets", s(&bs), "--exposures", s(&ex), "--out", s(&out_dir),
        "--lambda-max-values", "0.5,1.5", "--phis", "0,0.05", "--fixed-relative",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let (csv, meta) = report_files(&out_dir, "policy");
    let body = std::fs::read_to_string(csv).unwrap();
    let rows: Vec<&str> = body.lines().skip(1).collect();
    assert_eq!(rows.len(), 4);
    // φ = 0 leaves losses unchanged.
    for row in rows.iter().filter(|r| r.split(',').nth(1) == Some("0")) {
        let cols: Vec<&str> = row.split(',').collect();
        assert_eq!(cols[3], "1");
        assert_eq!(cols[4], "1");
    }
    assert_eq!(read_json(meta)["shock_semantics"], "fixed_relative");
}

#[test]
fn synth_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for d in [&a, &b] {
        let out = revstress(&["synth", "--seed", "9", "--banks", "12", "--out", s(d)]);
        assert!(out.status.success());
    }
    assert_eq!(
        std::fs::read(a.join("balance_sheets.csv")).unwrap(),
        std::fs::read(b.join("balance_sheets.csv")).unwrap()
    );
}
