use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn repo(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..").join(rel)
}

fn case(name: &str) -> String {
    repo(&format!("cases/{name}.m")).to_string_lossy().into_owned()
}

fn fppf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fppf")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn buses(v: &Value) -> Vec<(f64, f64)> {
    v["buses"]
        .as_array()
        .unwrap()
        .iter()
        .map(|b| (b["vm"].as_f64().unwrap(), b["va_deg"].as_f64().unwrap()))
        .collect()
}

#[test]
fn solve_case9_all_algorithms_agree() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = fppf(&["solve", "--case", &case("case9"), "--algo", "fppf,nr,fdlf", "--out-dir", out]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("fppf: converged (8 completed iterations"), "{text}");

    let mut sols = Vec::new();
    for algo in ["fppf", "nr", "fdlf"] {
        let json = read_json(&dir.path().join(format!("case9_{algo}.json")));
        assert_eq!(json["algorithm"], algo);
        assert_eq!(json["converged"], true);
        assert_eq!(json["termination"]["kind"], "converged");
        assert!(json["mismatch_trace"].as_array().unwrap().len() >= 2);
        let trace = fs::read_to_string(dir.path().join(format!("case9_{algo}_trace.csv"))).unwrap();
        assert!(trace.starts_with("iteration,mismatch"), "{trace}");
        sols.push(buses(&json));
    }
    for other in &sols[1..] {
        for (a, b) in sols[0].iter().zip(other) {
            assert!((a.0 - b.0).abs() < 1e-6);
            assert!((a.1 - b.1).abs() < 1e-4);
        }
    }
}

#[test]
fn solve_json_case_with_distributed_slack() {
    let dir = TempDir::new().unwrap();
    let path = repo("docs/example_case.json");
    let o = fppf(&["solve", "--case", path.to_str().unwrap(), "--out-dir", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let json = read_json(&dir.path().join("example_case_fppf.json"));
    assert_eq!(json["converged"], true);
    assert_eq!(json["buses"].as_array().unwrap().len(), 4);
    assert_eq!(json["gens"].as_array().unwrap().len(), 2);

    // Baselines only handle a single slack bus.
    let o = fppf(&["solve", "--case", path.to_str().unwrap(), "--algo", "nr", "--out-dir", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn solve_from_previous_solution() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = fppf(&["solve", "--case", &case("case9"), "--algo", "nr", "--out-dir", out]);
    assert_eq!(o.status.code(), Some(0));
    let init = dir.path().join("case9_nr.json");
    let warm = dir.path().join("warm");
    let o = fppf(&[
        "solve",
        "--case",
        &case("case9"),
        "--algo",
        "fppf",
        "--init",
        init.to_str().unwrap(),
        "--out-dir",
        warm.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let json = read_json(&warm.join("case9_fppf.json"));
    assert!(json["iterations"].as_u64().unwrap() <= 1);
}

#[test]
fn disconnected_case_is_rejected() {
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("split.json");
    fs::write(
        &path,
        r#"{
          "base_mva": 100,
          "buses": [
            {"id": 1, "type": 3, "pd": 0, "qd": 0, "vm": 1, "va_deg": 0},
            {"id": 2, "type": 1, "pd": 10, "qd": 5, "vm": 1, "va_deg": 0},
            {"id": 3, "type": 1, "pd": 10, "qd": 5, "vm": 1, "va_deg": 0},
            {"id": 4, "type": 1, "pd": 10, "qd": 5, "vm": 1, "va_deg": 0}
          ],
          "gens": [{"bus": 1, "pg": 30, "vg": 1.0}],
          "branches": [
            {"from": 1, "to": 2, "r": 0.01, "x": 0.1},
            {"from": 3, "to": 4, "r": 0.01, "x": 0.1}
          ]
        }"#,
    )
    .unwrap();
    let o = fppf(&["solve", "--case", path.to_str().unwrap(), "--out-dir", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).to_lowercase().contains("connect"), "{}", stderr(&o));
}

#[test]
fn missing_file_and_unknown_algorithm() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = fppf(&["solve", "--case", "/nonexistent/case.m", "--out-dir", out]);
    assert_eq!(o.status.code(), Some(2));
    let o = fppf(&["solve", "--case", &case("case9"), "--algo", "gauss", "--out-dir", out]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("gauss"));
}

#[test]
fn stressed_case118_reports_validity_exit() {
    let dir = TempDir::new().unwrap();
    let o = fppf(&[
        "solve",
        "--case",
        &case("case118"),
        "--rx-cap",
        "0.8",
        "--load-scale",
        "3.5",
        "--out-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    let json = read_json(&dir.path().join("case118_fppf.json"));
    assert_eq!(json["converged"], false);
    assert_eq!(json["termination"]["kind"], "left_validity_region");
    assert!(json["termination"]["psi"].as_f64().unwrap().abs() > 1.0);
}

#[test]
fn bench_writes_iteration_table() {
    let dir = TempDir::new().unwrap();
    let o = fppf(&[
        "bench",
        "--case",
        &format!("{},{}", case("case9"), case("case30")),
        "--algo",
        "nr,fppf",
        "--rx-cap",
        "0.8",
        "--out-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let csv = fs::read_to_string(dir.path().join("bench.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "case,algorithm,iterations,status");
    assert_eq!(lines.len(), 5);
    assert!(lines.contains(&"case9,fppf,8,converged"), "{csv}");
}

#[test]
fn sweep_is_deterministic_across_thread_counts() {
    let dir = TempDir::new().unwrap();
    let run = |threads: &str| {
        let out = dir.path().join(format!("t{threads}"));
        let o = fppf(&[
            "sweep-init",
            "--case",
            &case("case9"),
            "--algo",
            "nr,fppf",
            "--delta",
            "0.1,0.5",
            "--samples",
            "12",
            "--seed",
            "7",
            "--threads",
            threads,
            "--out-dir",
            out.to_str().unwrap(),
        ]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        (
            fs::read_to_string(out.join("sweep.csv")).unwrap(),
            fs::read_to_string(out.join("sweep_samples.csv")).unwrap(),
        )
    };
    let a = run("1");
    let b = run("3");
    assert_eq!(a, b);
    assert_eq!(a.1.lines().count(), 1 + 2 * 2 * 12);
}

#[test]
fn twobus_certificate_pass_and_fail() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = fppf(&["twobus-cert", "--grid-n", "31", "--out-dir", out]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("certificate: PASS"));
    let cert = read_json(&dir.path().join("twobus_certificate.json"));
    assert_eq!(cert["outcome"]["status"], "certified");
    assert!(dir.path().join("twobus_trajectory.csv").exists());

    let fail = dir.path().join("fail");
    let o = fppf(&[
        "twobus-cert",
        "--g",
        "5",
        "--theta-s",
        "-0.7853981633974483",
        "--grid-n",
        "31",
        "--out-dir",
        fail.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("not certified"), "{text}");
    assert!(text.contains("certificate: FAIL"), "{text}");
}

#[test]
fn twobus_scan_grid() {
    let dir = TempDir::new().unwrap();
    let o = fppf(&[
        "twobus-cert",
        "--grid-n",
        "21",
        "--scan-g",
        "0,0.5,1",
        "--scan-theta-s",
        "-0.1,0,0.1",
        "--out-dir",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let scan = fs::read_to_string(dir.path().join("twobus_scan.csv")).unwrap();
    assert_eq!(scan.lines().count(), 1 + 9);
}

#[test]
fn check_exit_codes() {
    let dir = TempDir::new().unwrap();
    let o = fppf(&["check", "--case", &case("case9"), "--out-dir", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(dir.path().join("case9_assumptions.json").exists());

    let o = fppf(&["check", "--case", &case("case300")]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stdout(&o).contains("strict diagonal dominance of B_LL: false"));
}
