use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpStream;
use std::path::Path;
use std::process::{Command, Output, Stdio};

use serde_json::Value;

fn labelbench(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_labelbench"))
        .args(args)
        .current_dir(dir)
        .env_remove("LABELBENCH_WORKERS")
        .output()
        .unwrap()
}

fn ok(args: &[&str], dir: &Path) -> Value {
    let out = labelbench(args, dir);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    let text = std::fs::read_to_string(path).unwrap();
    text.lines().filter(|l| !l.starts_with('#')).map(|l| l.split(',').map(String::from).collect()).collect()
}

#[test]
fn synth_inject_detect() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let summary = ok(&["synth", "--n", "300", "--classes", "3", "--separation", "8", "--seed", "5", "--out", "clean.csv"], d);
    assert_eq!(summary["rows"], 300);

    let summary = ok(&["inject", "--input", "clean.csv", "--kind", "uniform", "--rate", "0.1", "--seed", "9", "--out", "noisy.csv", "--record", "record.json"], d);
    assert_eq!(summary["requested"], 30);
    assert_eq!(summary["corrupted"], 30);

    // The written file and record agree with each other: exactly the
    // recorded rows differ from `y_true`.
    let rows = csv_rows(&d.join("noisy.csv"));
    assert_eq!(&rows[0][..3], ["id", "y", "y_true"]);
    let differing: Vec<usize> = (1..rows.len()).filter(|&r| rows[r][1] != rows[r][2]).map(|r| r - 1).collect();
    let record: Value = serde_json::from_str(&std::fs::read_to_string(d.join("record.json")).unwrap()).unwrap();
    let recorded: Vec<usize> = record["corrupted_indices"].as_array().unwrap().iter().map(|v| v.as_u64().unwrap() as usize).collect();
    assert_eq!(differing, recorded);

    // Same seed, same corruption.
    ok(&["inject", "--input", "clean.csv", "--kind", "uniform", "--rate", "0.1", "--seed", "9", "--out", "again.csv"], d);
    assert_eq!(std::fs::read(d.join("noisy.csv")).unwrap(), std::fs::read(d.join("again.csv")).unwrap());

    let summary = ok(&["detect", "--input", "noisy.csv", "--detector", "simifeat", "--detector", "confident", "--out", "card.csv"], d);
    assert_eq!(summary["detectors"].as_object().unwrap().len(), 2);
    assert!(summary["detectors"]["simifeat"]["error_f1"].as_f64().unwrap() > 0.8);
    let card = csv_rows(&d.join("card.csv"));
    assert_eq!(card.len(), 301);
    for col in ["flag_simifeat", "score_simifeat", "flag_confident", "score_confident"] {
        assert!(card[0].iter().any(|h| h == col), "missing {col} in {:?}", card[0]);
    }
}

#[test]
fn inject_from_config_and_bad_input() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&["synth", "--n", "200", "--classes", "4", "--separation", "6", "--out", "clean.csv"], d);
    std::fs::write(d.join("noise.json"), r#"{"kind": "class_dependent", "rate": 0.2, "seed": 1}"#).unwrap();
    let summary = ok(&["inject", "--input", "clean.csv", "--config", "noise.json", "--out", "noisy.csv"], d);
    assert_eq!(summary["kind"], "class_dependent");
    assert_eq!(summary["corrupted"], 40);

    let out = labelbench(&["inject", "--input", "clean.csv", "--kind", "uniform", "--rate", "1.5", "--out", "x.csv"], d);
    assert!(!out.status.success());
    let out = labelbench(&["inject", "--input", "missing.csv", "--kind", "uniform", "--rate", "0.1", "--out", "x.csv"], d);
    assert!(!out.status.success());
    let out = labelbench(&["detect", "--input", "clean.csv", "--detector", "nope", "--out", "c.csv"], d);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope"));
}

#[test]
fn run_then_compare() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(
        d.join("grid.json"),
        r#"{
            "datasets": [{"source": "blobs", "name": "blobs", "n": 240, "d": 2, "classes": 3, "separation": 8}],
            "noise": ["uniform", "asymmetric", "instance_dependent"],
            "rates": [0.1, 0.3],
            "detectors": ["confident", "simifeat", "cincer"]
        }"#,
    )
    .unwrap();
    let summary = ok(&["run", "--config", "grid.json", "--seed", "3", "--out", "out"], d);
    // 3 noises x 2 rates, each with the baseline plus 3 detectors.
    assert_eq!(summary["rows"], 24);
    assert_eq!(summary["cards"], 6);
    assert!(summary["errors"].as_array().unwrap().is_empty());
    assert_eq!(std::fs::read_dir(d.join("out/cards")).unwrap().count(), 6);
    let results = csv_rows(&d.join("out/results.csv"));
    assert_eq!(results.len(), 25);
    let seed_col = results[0].iter().position(|h| h == "seed").unwrap();
    assert!(results[1..].iter().all(|r| r[seed_col] == "3"));

    // Worker count does not change results.
    let out = Command::new(env!("CARGO_BIN_EXE_labelbench"))
        .args(["run", "--config", "grid.json", "--seed", "3", "--out", "out1"])
        .current_dir(d)
        .env("LABELBENCH_WORKERS", "1")
        .output()
        .unwrap();
    assert!(out.status.success());
    assert_eq!(std::fs::read(d.join("out/results.csv")).unwrap(), std::fs::read(d.join("out1/results.csv")).unwrap());

    let summary = ok(&["compare", "--results", "out/results.csv", "--metric", "det_error_f1", "--out", "cd.svg"], d);
    assert_eq!(summary["blocks"].as_array().unwrap().len(), 3);
    assert_eq!(summary["mean_ranks"].as_array().unwrap().len(), 3);
    let p = summary["friedman"]["p_value"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&p));
    let svg = std::fs::read_to_string(d.join("cd.svg")).unwrap();
    assert!(svg.starts_with("<svg") || svg.starts_with("<?xml"));
    for m in ["confident", "simifeat", "cincer"] {
        assert!(svg.contains(m));
    }
}

#[test]
fn invalid_worker_env_fails() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("grid.json"),
        r#"{"datasets": [{"source": "blobs", "name": "b", "n": 60, "d": 2, "classes": 2, "separation": 6}], "noise": ["uniform"], "rates": [0.1]}"#,
    )
    .unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_labelbench"))
        .args(["run", "--config", "grid.json", "--out", "out"])
        .current_dir(dir.path())
        .env("LABELBENCH_WORKERS", "zero")
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("LABELBENCH_WORKERS"));
}

#[test]
fn serve_answers_api_requests() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("session.json"),
        r#"{
            "dataset": {"source": "blobs", "name": "blobs", "n": 150, "d": 2, "classes": 3, "separation": 8},
            "noise": {"kind": "uniform", "rate": 0.1, "seed": 4}
        }"#,
    )
    .unwrap();
    let mut child = Command::new(env!("CARGO_BIN_EXE_labelbench"))
        .args(["serve", "--config", "session.json", "--port", "0"])
        .current_dir(dir.path())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stderr.take().unwrap()).read_line(&mut line).unwrap();
    let addr = line.trim().rsplit("http://").next().unwrap().to_string();

    let mut stream = TcpStream::connect(&addr).unwrap();
    write!(stream, "GET /api/session HTTP/1.1\r\nHost: {addr}\r\nConnection: close\r\n\r\n").unwrap();
    let mut response = String::new();
    stream.read_to_string(&mut response).unwrap();
    child.kill().unwrap();
    child.wait().unwrap();

    assert!(response.starts_with("HTTP/1.1 200"), "{response}");
    let body: Value = serde_json::from_str(response.split("\r\n\r\n").nth(1).unwrap()).unwrap();
    assert_eq!(body["num_samples"], 150);
}
