use std::path::Path;
use std::process::{Command, Output};

use lionsderiv::estimator::SchedulePolicy;
use lionsderiv::functionals::Variance;
use lionsderiv::io::{format_f64, parse_grid_csv, parse_sample, parse_study_csv};
use lionsderiv::{lions_derivative_grid, QuantizationLevel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lionsderiv"))
        .current_dir(dir)
        .args(args)
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn estimate_variance_on_balanced_sample() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("s.csv"), "0\n1\n").unwrap();
    let o = run(
        dir.path(),
        &["estimate", "--input", "s.csv", "--functional", "variance", "--tol", "1e-6", "--out", "g.csv"],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let rows = parse_grid_csv(&std::fs::read_to_string(dir.path().join("g.csv")).unwrap()).unwrap();
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0].x, 0.0);
    assert!((rows[0].g_hat + 1.0).abs() < 1e-9);
    assert_eq!(rows[1].x, 1.0);
    assert!((rows[1].g_hat - 1.0).abs() < 1e-9);
    let report: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("g.json")).unwrap()).unwrap();
    assert_eq!(report["converged"], Value::Bool(true));
    assert!(report["levels"].is_array());
    assert!(report["distances"].is_array());
}

#[test]
fn grid_csv_round_trips_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let text = "0.1\n0.37\n-0.91\n1.234567\n0.5\n";
    std::fs::write(dir.path().join("s.csv"), text).unwrap();
    let o = run(
        dir.path(),
        &["estimate", "--input", "s.csv", "--functional", "variance", "--level", "6", "--out", "g.csv"],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let rows = parse_grid_csv(&std::fs::read_to_string(dir.path().join("g.csv")).unwrap()).unwrap();

    let sample = parse_sample(text).unwrap();
    let level = QuantizationLevel::new(6).unwrap();
    let schedule = SchedulePolicy::default().schedule_for(level).unwrap();
    let est = lions_derivative_grid(&Variance, &sample, level, &schedule).unwrap();
    assert_eq!(rows.len(), est.len());
    for (i, r) in rows.iter().enumerate() {
        assert_eq!(r.x.to_bits(), est.grid_atoms()[i].to_bits());
        assert_eq!(r.g_hat.to_bits(), est.g_values()[i].to_bits());
        assert_eq!(r.err_est.to_bits(), est.error_estimates()[i].to_bits());
    }
    let report: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("g.json")).unwrap()).unwrap();
    assert_eq!(report["converged"], Value::Null);
}

#[test]
fn csv_to_stdout_without_out() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("s.csv"), "0,0.5\n1,0.5\n").unwrap();
    let o = run(dir.path(), &["estimate", "--input", "s.csv", "--functional", "mean_square", "--level", "2"]);
    assert_eq!(code(&o), 0);
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.starts_with("x,g_hat,err_est\n"));
    assert!(stderr(&o).contains("\"converged\": null"));
}

#[test]
fn empty_input_names_file_and_line() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("empty.csv"), "").unwrap();
    let o = run(dir.path(), &["estimate", "--input", "empty.csv", "--functional", "variance"]);
    assert_eq!(code(&o), 1);
    let err = stderr(&o);
    assert!(err.contains("empty.csv") && err.contains("line 1"), "{err}");
}

#[test]
fn missing_input_file_is_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), &["verify", "--input", "absent.csv", "--functional", "variance"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("absent.csv"));
}

#[test]
fn corrupted_line_reports_line_number() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("s.csv"), "# header comment\n0.5\nabc\n").unwrap();
    let o = run(dir.path(), &["verify", "--input", "s.csv", "--functional", "variance"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("line 3"), "{}", stderr(&o));
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("s.csv"), "0\n1\n").unwrap();
    let cases: [&[&str]; 6] = [
        &["estimate", "--input", "s.csv", "--functional", "variance", "--tol", "-1"],
        &["study", "--input", "s.csv", "--functional", "variance", "--levels", "8..2"],
        &["estimate", "--input", "s.csv"],
        &["estimate", "--functional", "variance"],
        &["estimate", "--input", "s.csv", "--functional", "variance", "--level", "53"],
        &["estimate", "--input", "s.csv", "--functional", "{\"name\":\"linear\",\"phi\":[0,0,0,0,0,0,0,0,0,0,0,1]}"],
    ];
    for args in cases {
        let o = run(dir.path(), args);
        assert_eq!(code(&o), 2, "{args:?}: {}", stderr(&o));
    }
}

#[test]
fn config_file_with_flag_override() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("s.csv"), "0.1\n0.7\n0.35\n").unwrap();
    std::fs::write(
        dir.path().join("run.json"),
        r#"{"functional": {"name": "variance"}, "input": "s.csv", "levels": "8..2"}"#,
    )
    .unwrap();
    let o = run(dir.path(), &["study", "--config", "run.json"]);
    assert_eq!(code(&o), 2);
    let o = run(dir.path(), &["study", "--config", "run.json", "--levels", "2..5", "--out", "t.csv"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let rows = parse_study_csv(&std::fs::read_to_string(dir.path().join("t.csv")).unwrap()).unwrap();
    assert_eq!(rows.iter().map(|r| r.n).collect::<Vec<_>>(), vec![2, 3, 4, 5]);
    assert!(rows[0].succ_diff.is_none());
    for r in &rows {
        assert!(r.w2_quant <= (-(r.n as f64)).exp2());
        assert!(r.oracle_err.is_some());
    }
}

#[test]
fn verify_variance_defaults_passes_all_checks() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("s.csv"), "0.12\n-0.4\n0.93\n0.5\n1.7\n").unwrap();
    let o = run(dir.path(), &["verify", "--input", "s.csv", "--functional", "variance"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let report: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(report["passed"], Value::Bool(true));
    let checks = report["checks"].as_array().unwrap();
    let names: Vec<&str> = checks.iter().map(|c| c["check"].as_str().unwrap()).collect();
    assert_eq!(names, ["structure", "law_invariance", "lemma2_constancy", "oracle"]);
    assert!(checks.iter().all(|c| c["status"] == "pass"));
}

#[test]
fn study_oracle_error_shrinks_for_variance() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let text: String = (0..512).map(|_| format_f64(rng.gen_range(0.0..1.0)) + "\n").collect();
    std::fs::write(dir.path().join("u.csv"), text).unwrap();
    let o = run(dir.path(), &["study", "--input", "u.csv", "--functional", "variance", "--levels", "2..8"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let rows = parse_study_csv(&String::from_utf8_lossy(&o.stdout)).unwrap();
    assert_eq!(rows.len(), 7);
    for r in &rows {
        assert!(r.w2_quant <= (-(r.n as f64)).exp2());
    }
    for w in rows.windows(2) {
        let ratio = w[0].oracle_err.unwrap() / w[1].oracle_err.unwrap();
        assert!(ratio >= 1.8, "n = {}: ratio {ratio}", w[1].n);
    }
}
