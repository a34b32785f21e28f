use std::process::{Command, Output};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_causalbias"))
        .args(args)
        .env("CAUSALBIAS_THREADS", "2")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn column(header: &str, row: &str, name: &str) -> f64 {
    let i = header.split(',').position(|h| h == name).unwrap();
    row.split(',').nth(i).unwrap().parse().unwrap()
}

#[test]
fn identify_exit_codes() {
    let ok = run(&["--model", "builtin:lesser-evil", "identify", "--observe", "V1"]);
    assert_eq!(ok.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_slice(&ok.stdout).unwrap();
    assert_eq!(v["identifiable"], true);

    let bad = run(&["--model", "builtin:confounding", "identify"]);
    assert_eq!(bad.status.code(), Some(3));
    let v: serde_json::Value = serde_json::from_slice(&bad.stdout).unwrap();
    assert_eq!(v["violations"][0]["witness_path"], "U_V1 -> V1 -> X");

    let missing = run(&["--model", "/definitely/not/here.json", "identify"]);
    assert_eq!(missing.status.code(), Some(1));
    assert_eq!(run(&["--bogus"]).status.code(), Some(1));
    assert_eq!(run(&["--help"]).status.code(), Some(0));
}

#[test]
fn model_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.json");
    let spec = causalbias::builtin("overcontrol", None).unwrap().to_spec().to_json();
    std::fs::write(&path, spec).unwrap();
    let o = run(&["--model", path.to_str().unwrap(), "identify"]);
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(o.status.code(), Some(if v["identifiable"] == true { 0 } else { 3 }));
}

#[test]
fn confounding_bias_is_one_half() {
    let o = run(&["--model", "builtin:confounding", "bias", "--x", "1"]);
    assert_eq!(o.status.code(), Some(0));
    let s = stdout(&o);
    let mut lines = s.lines();
    let (h, r) = (lines.next().unwrap(), lines.next().unwrap());
    assert!((column(h, r, "B") - 0.5).abs() < 1e-9);
    assert!((column(h, r, "C") - 1.0).abs() < 1e-9);
}

#[test]
fn lesser_evil_observed_bias_and_posterior_file() {
    let dir = tempfile::tempdir().unwrap();
    let post = dir.path().join("post.csv");
    let o = run(&[
        "--model",
        "builtin:lesser-evil",
        "--format",
        "json",
        "bias",
        "--x",
        "2",
        "--observe",
        "V2=2",
        "--posterior-out",
        post.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let b = v["bias_b"].as_f64().unwrap();
    let se = v["std_errors"]["bias_b"].as_f64().unwrap();
    assert!((b + 1.0).abs() < 4.0 * se + 1e-3, "B {b} se {se}");

    let mut rdr = csv::Reader::from_path(&post).unwrap();
    let header: Vec<String> = rdr.headers().unwrap().iter().map(String::from).collect();
    assert_eq!(header, ["U_V1", "U_X", "U_V2", "U_Y", "weight"]);
    let rows: Vec<csv::StringRecord> = rdr.records().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), 10_000);
    for r in &rows {
        // x = exp(U_V1) + U_X holds exactly on every draw
        let u: Vec<f64> = r.iter().map(|c| c.parse().unwrap()).collect();
        assert!((u[0].exp() + u[1] - 2.0).abs() < 1e-9);
    }
}

#[test]
fn output_is_reproducible() {
    let args = [
        "--model",
        "builtin:ascvd",
        "--method",
        "is",
        "--samples",
        "2000",
        "--seed",
        "7",
        "bias",
        "--x",
        "0.3",
        "--observe",
        "A=55",
        "--observe",
        "L=4.9",
    ];
    let a = run(&args);
    let b = Command::new(env!("CARGO_BIN_EXE_causalbias"))
        .args(args)
        .env("CAUSALBIAS_THREADS", "1")
        .output()
        .unwrap();
    assert_eq!(a.status.code(), Some(0), "{}", String::from_utf8_lossy(&a.stderr));
    assert_eq!(a.stdout, b.stdout);
}

#[test]
fn simulate_csv_parses_back() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("d.csv");
    let o = run(&[
        "--model",
        "builtin:ascvd",
        "--samples",
        "50",
        "--seed",
        "3",
        "--out",
        out.to_str().unwrap(),
        "simulate",
    ]);
    assert_eq!(o.status.code(), Some(0));
    let mut rdr = csv::Reader::from_path(&out).unwrap();
    assert_eq!(rdr.headers().unwrap().len(), 9);
    let n = rdr
        .records()
        .map(|r| r.unwrap().iter().map(|c| c.parse::<f64>().unwrap()).count())
        .count();
    assert_eq!(n, 50);
}

#[test]
fn lesser_evil_experiment_grid() {
    let o = run(&["--samples", "500", "experiment", "lesser-evil", "--alpha", "1", "--points", "4"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let s = stdout(&o);
    let lines: Vec<&str> = s.lines().collect();
    assert_eq!(lines.len(), 5);
    let xs: Vec<f64> = lines[1..].iter().map(|r| column(lines[0], r, "x")).collect();
    assert_eq!(xs, [-15.0, -5.0, 5.0, 15.0]);
    for r in &lines[1..] {
        assert!((column(lines[0], r, "abs_B_observed") - 1.0).abs() < 0.1);
    }
}

#[test]
fn unknown_param_is_usage_error() {
    let o = run(&["--model", "builtin:confounding", "--param", "zeta=1", "identify"]);
    assert_eq!(o.status.code(), Some(1));
}
