//! End-to-end tests for the gwboot binary: exit codes, report shapes,
//! manifest reruns, and the pinned CSV headers.

use std::process::{Command, Output};

use serde_json::Value;

fn gwboot(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gwboot"))
        .args(args)
        .output()
        .expect("binary launches")
}

fn stdout_json(out: &Output) -> Value {
    assert!(
        out.status.success(),
        "expected success, stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).expect("stdout is a single JSON document")
}

fn read_json(path: &std::path::Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn critical_point_of_a_two_atom_law_is_exact() {
    let out = gwboot(&["qc", "--xi", r#"{"r":2,"support":{"2":"3/5","5":"2/5"}}"#]);
    let v = stdout_json(&out);
    assert_eq!(v["q_c"], "5/6");
    assert_eq!(v["argmax"], serde_json::json!([0.0]));
    assert_eq!(v["schema"], "gwboot/1");
}

#[test]
fn design_with_a_plateau_at_one_tenth_returns_the_known_law() {
    let out = gwboot(&["design", "--r", "2", "--nus", "1", "--xs", "1/10"]);
    let v = stdout_json(&out);
    assert_eq!(v["xi"]["support"]["2"], "13/18");
    assert_eq!(v["xi"]["support"]["3"], "5/18");
    assert_eq!(v["q_c"], "20/29");
    assert_eq!(v["certificate"]["certified"], true);
}

#[test]
fn iteration_from_a_zero_initial_density_stays_at_zero() {
    let out = gwboot(&["iterate", "--xi", "δ2", "--q", "0", "--t", "5"]);
    let v = stdout_json(&out);
    let values = v["values"].as_array().unwrap();
    assert_eq!(values.len(), 6);
    assert!(values.iter().all(|x| x.as_f64() == Some(0.0)));
}

#[test]
fn csv_output_writes_the_table_and_a_manifest_beside_it() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("trace.csv");
    let out = gwboot(&[
        "iterate",
        "--xi",
        "δ2",
        "--q",
        "9/10",
        "--t",
        "3",
        "--format",
        "csv",
        "--output",
        path.to_str().unwrap(),
    ]);
    assert!(out.status.success());

    let body = std::fs::read_to_string(&path).unwrap();
    let mut lines = body.lines();
    assert_eq!(lines.next(), Some("t,phi"));
    assert_eq!(lines.count(), 4);

    let manifest = read_json(&dir.path().join("trace.csv.manifest.json"));
    assert_eq!(manifest["schema"], "gwboot/1");
    assert_eq!(manifest["config"]["command"], "iterate");
    assert_eq!(manifest["config"]["output"]["format"], "csv");
}

#[test]
fn rerunning_from_the_manifest_reproduces_the_report_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("sim.json");
    let p = path.to_str().unwrap();
    let out = gwboot(&[
        "simulate", "--xi", "δ2", "--q", "7/10", "--t", "3", "--n", "400", "--seed", "42",
        "--output", p,
    ]);
    assert!(out.status.success());
    let first = std::fs::read(&path).unwrap();

    let manifest = format!("{p}.manifest.json");
    let rerun = gwboot(&["--config", &manifest]);
    assert!(rerun.status.success());
    assert_eq!(std::fs::read(&path).unwrap(), first);
}

#[test]
fn config_file_and_flags_produce_the_same_report() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("qc.json");
    std::fs::write(
        &path,
        r#"{"command":"qc","parameters":{"xi":{"r":2,"support":{"2":"3/5","5":"2/5"}}}}"#,
    )
    .unwrap();
    let from_file = gwboot(&["--config", path.to_str().unwrap()]);
    let from_flags = gwboot(&["qc", "--xi", r#"{"r":2,"support":{"2":"3/5","5":"2/5"}}"#]);
    assert!(from_file.status.success());
    assert_eq!(from_file.stdout, from_flags.stdout);
}

#[test]
fn unknown_parameter_keys_are_rejected_with_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    std::fs::write(
        &path,
        r#"{"command":"qc","parameters":{"xi":"δ2","bogus":1}}"#,
    )
    .unwrap();
    let out = gwboot(&["--config", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bogus"));
}

#[test]
fn csv_format_on_a_scalar_report_is_a_usage_error() {
    let out = gwboot(&["qc", "--xi", "δ2", "--format", "csv"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_required_parameters_are_usage_errors() {
    // iterate needs a step count when no stopping rule is given
    let out = gwboot(&["iterate", "--xi", "δ2", "--q", "1/2"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn failed_certificates_exit_three_and_serialize_the_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("fail.json");
    let out = gwboot(&[
        "design", "--r", "2", "--nus", "1", "--xs", "9/10",
        "--output", path.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(3));

    let v = read_json(&path);
    assert_eq!(v["schema"], "gwboot/1");
    assert_eq!(v["error"]["kind"], "certificate_failure");
    assert!(v["error"]["message"].as_str().unwrap().contains("positive"));
}

#[test]
fn equal_seeds_give_identical_simulation_reports() {
    let args = [
        "simulate", "--xi", "δ2", "--q", "7/10", "--t", "4", "--n", "300", "--seed", "9",
    ];
    let a = gwboot(&args);
    let b = gwboot(&args);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
}

#[test]
fn exit_time_table_has_the_pinned_header() {
    let out = gwboot(&[
        "bifurcation", "--task", "exit", "--c", "1", "--alpha", "2", "--y0", "0.25",
        "--delta", "0.1", "--x0", "0.31", "--eps", "0.001", "--n-max", "100000",
        "--format", "csv",
    ]);
    assert!(out.status.success());
    let body = String::from_utf8_lossy(&out.stdout);
    let mut lines = body.lines();
    assert_eq!(lines.next(), Some("epsilon,N,rescaled,lower,upper,within"));
    let row = lines.next().unwrap();
    assert_eq!(row.split(',').count(), 6);
    assert!(row.starts_with("0.001,"));
}

#[test]
fn gk_reports_exact_coefficients() {
    let out = gwboot(&["gk", "--k", "3", "--r", "2"]);
    let v = stdout_json(&out);
    assert_eq!(v["coeffs"], serde_json::json!(["0", "3", "-2"]));
    assert_eq!(v["degree"], 2);
}

#[test]
fn eval_table_includes_the_reference_level_when_q_is_given() {
    let out = gwboot(&[
        "eval", "--xi", r#"{"r":2,"support":{"2":"3/5","5":"2/5"}}"#,
        "--grid", "4", "--q", "5/6", "--format", "csv",
    ]);
    assert!(out.status.success());
    let body = String::from_utf8_lossy(&out.stdout);
    let mut lines = body.lines();
    assert_eq!(lines.next(), Some("x,g,h,inv_q"));
    // g is bounded by 1/q on [0, 1], with equality only at the plateau
    for line in lines {
        assert_eq!(line.rsplit(',').next(), Some("1.2"));
    }
}

#[test]
fn precision_env_var_sets_the_default_and_the_flag_overrides_it() {
    let from_env = Command::new(env!("CARGO_BIN_EXE_gwboot"))
        .args(["iterate", "--xi", "δ2", "--q", "9/10", "--t", "2"])
        .env("GWBOOT_PRECISION_BITS", "96")
        .output()
        .unwrap();
    let v = stdout_json(&from_env);
    assert_eq!(v["precision_bits"], 96);

    let from_flag = Command::new(env!("CARGO_BIN_EXE_gwboot"))
        .args([
            "iterate", "--xi", "δ2", "--q", "9/10", "--t", "2", "--precision-bits", "80",
        ])
        .env("GWBOOT_PRECISION_BITS", "96")
        .output()
        .unwrap();
    let v = stdout_json(&from_flag);
    assert_eq!(v["precision_bits"], 80);
}

#[test]
fn decimal_parameters_convert_to_exact_rationals() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("trace.json");
    let out = gwboot(&[
        "iterate", "--xi", "δ2", "--q", "0.9", "--t", "1",
        "--output", path.to_str().unwrap(),
    ]);
    assert!(out.status.success());

    // 0.9 must arrive as 9/10 exactly, not as the nearest binary double
    assert_eq!(read_json(&path)["q_exact"], "9/10");
    let manifest = read_json(&dir.path().join("trace.json.manifest.json"));
    assert_eq!(manifest["config"]["parameters"]["q"], "9/10");
}

#[test]
fn json_reports_round_trip_byte_for_byte() {
    let out = gwboot(&[
        "classify", "--xi", r#"{"r":2,"support":{"2":"13/18","3":"5/18"}}"#,
    ]);
    let v = stdout_json(&out);
    let again = format!("{}\n", serde_json::to_string_pretty(&v).unwrap());
    assert_eq!(again.into_bytes(), out.stdout);
}

#[test]
fn series_family_laws_parse_and_echo_their_family_form() {
    let out = gwboot(&["qc", "--xi", r#"{"r":2,"family":"claim39"}"#]);
    let v = stdout_json(&out);
    // g ≡ 1 for the heavy-tail family, so the critical point sits at 1
    assert_eq!(v["q_c"], "1");
    let manifest: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(manifest["config"]["parameters"]["xi"]["family"], "claim39");
}

#[test]
fn stdout_runs_keep_the_manifest_on_stderr() {
    let out = gwboot(&["gk", "--k", "4", "--r", "3"]);
    assert!(out.status.success());
    let manifest: Value = serde_json::from_slice(&out.stderr).expect("stderr is the manifest");
    assert_eq!(manifest["config"]["command"], "gk");
    assert_eq!(manifest["config"]["parameters"]["k"], 4);
}
