use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn tadmm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tadmm"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write(path: &Path, text: &str) {
    fs::write(path, text).unwrap();
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

const TWO_AGENT_LP: &str = r#"{
  "N": 2, "p": 1, "b": [1.0],
  "agents": [
    {"quad": [[0.0]], "lin": [1.0], "offset": 0.0, "ineqA": [], "ineqB": [],
     "lower": [0.0], "upper": [1.0], "A": [[1.0]], "bShare": [0.5]},
    {"quad": [[0.0]], "lin": [2.0], "offset": 0.0, "ineqA": [], "ineqB": [],
     "lower": [0.0], "upper": [1.0], "A": [[1.0]], "bShare": [0.5]}
  ]
}"#;

#[test]
fn validate_reports_each_assumption() {
    let dir = tempfile::tempdir().unwrap();
    let path3 = dir.path().join("path3.json");
    write(&path3, r#"{"n": 3, "edges": [[0, 1], [1, 2]]}"#);
    let out = tadmm(&["validate", path3.to_str().unwrap()]);
    assert!(out.status.success(), "{}", stdout(&out));
    assert!(stdout(&out).contains("PASS"));

    let identity = dir.path().join("identity.json");
    write(
        &identity,
        r#"{"n": 2, "edges": [], "weights": [[1.0, 0.0], [0.0, 1.0]]}"#,
    );
    let out = tadmm(&["validate", identity.to_str().unwrap()]);
    assert!(!out.status.success());

    let cycle = dir.path().join("c4.json");
    write(&cycle, r#"{"n": 4, "edges": [[0, 1], [1, 2], [2, 3], [3, 0]]}"#);
    let out = tadmm(&["validate", cycle.to_str().unwrap()]);
    assert!(!out.status.success());
    let text = stdout(&out);
    assert!(text.contains("positive semidefinite"));
    assert!(text.contains("use --square"));
    let out = tadmm(&["validate", cycle.to_str().unwrap(), "--square"]);
    assert!(out.status.success());
}

#[test]
fn reference_of_two_agent_lp() {
    let dir = tempfile::tempdir().unwrap();
    let problem = dir.path().join("lp.json");
    write(&problem, TWO_AGENT_LP);
    let out_file = dir.path().join("ref.json");
    let out = tadmm(&[
        "reference",
        "--problem",
        problem.to_str().unwrap(),
        "--out",
        out_file.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let doc: Value = serde_json::from_str(&fs::read_to_string(&out_file).unwrap()).unwrap();
    // put everything on the cheaper agent: x = (1, 0)
    assert!((doc["cost"].as_f64().unwrap() - 1.0).abs() < 1e-7);
    let x: Vec<f64> = serde_json::from_value(doc["x"].clone()).unwrap();
    assert!((x[0] - 1.0).abs() < 1e-7 && x[1].abs() < 1e-7);
}

#[test]
fn zero_rounds_writes_only_round_zero() {
    let dir = tempfile::tempdir().unwrap();
    let problem = dir.path().join("lp.json");
    write(&problem, TWO_AGENT_LP);
    let out_dir = dir.path().join("out");
    let out = tadmm(&[
        "run",
        "--problem",
        problem.to_str().unwrap(),
        "--max-iters",
        "0",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(out_dir.join("trajectory-tracking-admm.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "k,cost,costGap,couplingInf,eD,eL,dBarInf,lambdaBar_0");
    assert_eq!(lines.len(), 2);
    assert!(lines[1].starts_with("0,"));
}

#[test]
fn both_algorithms_with_reference_and_certificate() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("out");
    let out = tadmm(&[
        "run",
        "--preset",
        "random",
        "--algorithm",
        "both",
        "--max-iters",
        "40",
        "--reference",
        "--certify",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for name in [
        "trajectory-tracking-admm.csv",
        "trajectory-parallel-admm.csv",
        "lambdas-tracking-admm.csv",
        "lambdas-parallel-admm.csv",
        "summary.json",
        "certificate.json",
    ] {
        assert!(out_dir.join(name).exists(), "missing {name}");
    }
    let summary: Value = serde_json::from_str(&fs::read_to_string(out_dir.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["runs"].as_array().unwrap().len(), 2);
    assert!(summary["comparison"]["maxPrimalDifference"].is_number());
    let cert: Value = serde_json::from_str(&fs::read_to_string(out_dir.join("certificate.json")).unwrap()).unwrap();
    assert_eq!(cert["certificate"]["certified"], Value::Bool(true));
    assert_eq!(cert["descent"]["passes"], Value::Bool(true));
    // cost gap column is filled in
    let csv = fs::read_to_string(out_dir.join("trajectory-tracking-admm.csv")).unwrap();
    let row: Vec<&str> = csv.lines().nth(1).unwrap().split(',').collect();
    assert!(!row[2].is_empty());
}

#[test]
fn identical_runs_are_byte_identical_across_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let mut csvs = Vec::new();
    for threads in ["1", "3"] {
        let out_dir = dir.path().join(format!("t{threads}"));
        let out = tadmm(&[
            "run",
            "--preset",
            "random",
            "--seed",
            "4",
            "--max-iters",
            "60",
            "--threads",
            threads,
            "--out",
            out_dir.to_str().unwrap(),
        ]);
        assert!(out.status.success());
        csvs.push(fs::read(out_dir.join("trajectory-tracking-admm.csv")).unwrap());
    }
    assert_eq!(csvs[0], csvs[1]);
}

#[test]
fn pev_gen_round_trips_into_run_and_reference() {
    let dir = tempfile::tempdir().unwrap();
    let problem = dir.path().join("pev.json");
    let graph = dir.path().join("graph.json");
    let out = tadmm(&[
        "pev-gen",
        "--vehicles",
        "4",
        "--horizon",
        "24",
        "--seed",
        "2",
        "--out",
        problem.to_str().unwrap(),
        "--graph-out",
        graph.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let reference = dir.path().join("ref.json");
    let out = tadmm(&[
        "reference",
        "--problem",
        problem.to_str().unwrap(),
        "--out",
        reference.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let out_dir = dir.path().join("run");
    let out = tadmm(&[
        "run",
        "--problem",
        problem.to_str().unwrap(),
        "--graph",
        graph.to_str().unwrap(),
        "--reference-file",
        reference.to_str().unwrap(),
        "--c",
        "1e-3",
        "--max-iters",
        "20",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary: Value = serde_json::from_str(&fs::read_to_string(out_dir.join("summary.json")).unwrap()).unwrap();
    let stored: Value = serde_json::from_str(&fs::read_to_string(&reference).unwrap()).unwrap();
    assert_eq!(summary["runs"][0]["referenceCost"], stored["cost"]);
}

#[test]
fn bad_inputs_fail_with_a_message() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.json");
    let out = tadmm(&["run", "--problem", missing.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));

    let problem = dir.path().join("lp.json");
    write(&problem, TWO_AGENT_LP);
    let cycle = dir.path().join("c4.json");
    write(&cycle, r#"{"n": 4, "edges": [[0, 1], [1, 2], [2, 3], [3, 0]]}"#);
    let out = tadmm(&[
        "run",
        "--problem",
        problem.to_str().unwrap(),
        "--graph",
        cycle.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("4 nodes"));

    let out = tadmm(&["run", "--preset", "random", "--c", "-1", "--out", dir.path().to_str().unwrap()]);
    assert!(!out.status.success());
}
