use std::process::{Command, Output};

use serde_json::Value;
use shadow_inversion::comb::{Architecture, CombChoi, CombSpec};
use shadow_inversion::tensor::CMatrix;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_shadow-inversion"))
        .args(args)
        .arg("--quiet")
        .output()
        .expect("binary runs")
}

fn record(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| {
        panic!("stdout is not JSON ({e}): {}\nstderr: {}", String::from_utf8_lossy(&out.stdout), String::from_utf8_lossy(&out.stderr))
    })
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

#[test]
fn count_reports_reference_values() {
    let out = run(&["count", "--d", "6", "--t", "3", "--spectrum", "3,3"]);
    assert_eq!(code(&out), 0);
    let r = record(&out);
    assert_eq!(r["result"]["variable_count"], "2304");
    assert_eq!(r["result"]["bound"], "186624");
    assert_eq!(r["schema_version"], 1);
    assert!(r["timestamp"].as_str().unwrap().ends_with('Z'));

    let r = record(&run(&["count", "--t", "3", "--obs", "Z"]));
    assert_eq!(r["result"]["variable_count"], "560");
    assert_eq!(r["result"]["full_variable_count"], "65536");
}

#[test]
fn count_rejects_bad_spectrum() {
    assert_eq!(code(&run(&["count", "--d", "5", "--t", "1", "--spectrum", "3,3"])), 1);
    assert_eq!(code(&run(&["count", "--t", "1", "--spectrum", "a,b"])), 1);
    assert_eq!(code(&run(&["count", "--t", "0", "--spectrum", "1,1"])), 1);
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(code(&run(&["no-such-command"])), 1);
    assert_eq!(code(&run(&["solve"])), 1);
    assert_eq!(code(&run(&["solve", "--t", "1", "--arch", "diagonal"])), 1);
    assert_eq!(code(&run(&["--help"])), 0);
}

#[test]
fn verify_circuit_passes() {
    let out = run(&["verify-circuit", "--trials", "20", "--states", "4"]);
    assert_eq!(code(&out), 0);
    let r = record(&out);
    assert_eq!(r["passed"], true);
    assert!(r["result"]["max_shadow_residual"].as_f64().unwrap() < 1e-10);
    let p = r["result"]["postselection_probability_min"].as_f64().unwrap();
    assert!((p - 1.0 / 3.0).abs() < 1e-10);
    assert_eq!(code(&run(&["verify-circuit", "--trials", "0"])), 1);
}

#[test]
fn schur_check_tables() {
    let dims = |args: &[&str]| -> Vec<(u64, u64)> {
        let out = run(args);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
        record(&out)["result"]["irreps"]
            .as_array()
            .unwrap()
            .iter()
            .map(|b| (b["dim"].as_u64().unwrap(), b["mult"].as_u64().unwrap()))
            .collect()
    };
    assert_eq!(dims(&["schur-check", "--d", "2", "--n", "2"]), vec![(3, 1), (1, 1)]);
    assert_eq!(dims(&["schur-check", "--d", "3", "--n", "2"]), vec![(6, 1), (3, 1)]);
    let r = record(&run(&["schur-check", "--obs", "Z", "--t", "1"]));
    assert_eq!(r["result"]["parameter_count"], 8);
    assert_eq!(code(&run(&["schur-check", "--d", "2"])), 1);
}

fn strip_times(mut v: Value) -> Value {
    let obj = v.as_object_mut().unwrap();
    obj.remove("timestamp");
    obj.remove("wall_time_s");
    obj.remove("command");
    if let Some(r) = obj.get_mut("result").and_then(Value::as_object_mut) {
        r.remove("solve_time_s");
    }
    v
}

#[test]
fn solve_small_problem_and_exports() {
    let dir = tempfile::tempdir().unwrap();
    let comb = dir.path().join("comb.json");
    let conic = dir.path().join("conic.json");
    let reduced = dir.path().join("reduced.json");
    let result = dir.path().join("result.json");
    let args = [
        "solve",
        "--t",
        "1",
        "--samples",
        "100",
        "--eval-samples",
        "200",
        "--comb-out",
        comb.to_str().unwrap(),
        "--problem-out",
        conic.to_str().unwrap(),
        "--reduced-out",
        reduced.to_str().unwrap(),
        "--output",
        result.to_str().unwrap(),
    ];
    let out = run(&args);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let r = record(&out);
    let fresh = r["result"]["objective_fresh"].as_f64().unwrap();
    assert!((fresh - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-3, "{fresh}");
    assert_eq!(r["result"]["status"], "optimal");
    assert_eq!(r["result"]["variables"], 8);
    assert_eq!(r["artifacts"].as_array().unwrap().len(), 3);
    let saved: Value = serde_json::from_str(&std::fs::read_to_string(&result).unwrap()).unwrap();
    assert_eq!(saved, r);
    let conic_json: Value = serde_json::from_str(&std::fs::read_to_string(&conic).unwrap()).unwrap();
    assert_eq!(conic_json["version"], 1);
    let reduced_json: Value = serde_json::from_str(&std::fs::read_to_string(&reduced).unwrap()).unwrap();
    assert_eq!(reduced_json["variable_count"], 8);

    // identical configuration ⇒ identical record apart from times
    let again = record(&run(&args));
    assert_eq!(strip_times(again), strip_times(r));

    let out = run(&["validate-comb", comb.to_str().unwrap(), "--tol", "1e-4", "--obs", "Z", "--samples", "100"]);
    assert_eq!(code(&out), 0);
    assert!(record(&out)["result"]["objective"].as_f64().unwrap() < 0.72);
}

#[test]
fn solve_parallel_matches_table_entry() {
    let out = run(&["solve", "--t", "2", "--arch", "parallel", "--samples", "300", "--eval-samples", "300"]);
    assert_eq!(code(&out), 0);
    let v = record(&out)["result"]["objective_training"].as_f64().unwrap();
    assert!((v - 0.4707).abs() < 0.02, "{v}");
}

#[test]
fn solve_failures_have_distinct_codes() {
    // size cap is a configuration error
    let out = run(&["solve", "--t", "3", "--full"]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("too large"));
    // iteration limit is a numerical failure
    let out = run(&["solve", "--t", "2", "--samples", "50", "--max-iter", "3"]);
    assert_eq!(code(&out), 2);
    assert_eq!(record(&out)["result"]["status"], "max_iter");
    // observable / dimension mismatch
    assert_eq!(code(&run(&["solve", "--t", "1", "--obs", "1,0,-1"])), 1);
    assert_eq!(code(&run(&["solve", "--t", "1", "--samples", "0"])), 1);
}

#[test]
fn observable_from_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("obs.json");
    std::fs::write(&path, "[[1.0, 0.0], [0.0, -1.0]]").unwrap();
    let out = run(&["solve", "--t", "1", "--samples", "50", "--obs-file", path.to_str().unwrap()]);
    assert_eq!(code(&out), 0);
    std::fs::write(&path, "[[1.0, 2.0], [0.0, -1.0]]").unwrap();
    assert_eq!(code(&run(&["solve", "--t", "1", "--obs-file", path.to_str().unwrap()])), 1);
}

#[test]
fn export_only() {
    let dir = tempfile::tempdir().unwrap();
    let conic = dir.path().join("p.json");
    let out = run(&["export", "--t", "2", "--arch", "parallel", "--samples", "10", "--problem-out", conic.to_str().unwrap()]);
    assert_eq!(code(&out), 0);
    assert!(conic.exists());
    assert_eq!(record(&out)["result"]["variables"], 60);
    assert_eq!(code(&run(&["export", "--t", "1"])), 1);
}

#[test]
fn invalid_comb_file_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    let spec = CombSpec::new(2, 1, Architecture::Sequential).unwrap();
    CombChoi::new(spec, CMatrix::identity(16, 16)).unwrap().save(&path).unwrap();
    let out = run(&["validate-comb", path.to_str().unwrap()]);
    assert_eq!(code(&out), 2);
    assert_eq!(record(&out)["passed"], false);
    assert_eq!(code(&run(&["validate-comb", "/nonexistent.json"])), 1);
}

#[test]
fn table1_csv_layout() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("t.csv");
    let out = run(&["table1", "--max-t", "1", "--samples", "200", "--csv", csv.to_str().unwrap()]);
    assert_eq!(code(&out), 0);
    let text = std::fs::read_to_string(&csv).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 3);
    assert!(lines[0].starts_with("architecture,t1,"));
    assert!(lines[1].starts_with("sequential,0.70"));
    assert!(lines[2].starts_with("parallel,0.70"));
}

#[test]
fn thread_count_from_environment() {
    let out = Command::new(env!("CARGO_BIN_EXE_shadow-inversion"))
        .args(["count", "--t", "1", "--spectrum", "1,1", "--quiet"])
        .env("SHADOW_INVERSION_THREADS", "1")
        .output()
        .unwrap();
    assert_eq!(code(&out), 0);
    let out = Command::new(env!("CARGO_BIN_EXE_shadow-inversion"))
        .args(["count", "--t", "1", "--spectrum", "1,1", "--quiet", "--threads", "0"])
        .output()
        .unwrap();
    assert_eq!(code(&out), 1);
}
