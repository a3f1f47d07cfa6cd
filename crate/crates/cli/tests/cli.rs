use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use microgrid::testnets;

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/data").join(name)
}

fn run(args: &[&Path]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_microgrid")).args(args).output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("terminated by signal")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn p(s: &str) -> &Path {
    Path::new(s)
}

/// Writes the three-bus triangle and synthesizes gains for it through the CLI.
fn triangle_files(dir: &Path) -> (PathBuf, PathBuf, PathBuf) {
    let case = dir.join("tri.json");
    std::fs::write(&case, testnets::triangle_constant_power().to_json()).unwrap();
    let prefix = dir.join("tri");
    let out = run(&[p("synthesize"), &case, p("--out"), &prefix]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    (case, dir.join("tri.gains.json"), dir.join("tri.cert.json"))
}

#[test]
fn check_case_reports_conditions() {
    let out = run(&[p("check-case"), &data("ieee14.json")]);
    assert_eq!(code(&out), 0);
    assert!(stdout(&out).contains("pass"));
}

#[test]
fn malformed_case_is_a_validation_failure() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, "{ \"buses\": [ }").unwrap();
    let out = run(&[p("check-case"), &bad]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("parse error"));
    let missing = run(&[p("check-case"), &dir.path().join("nope.json")]);
    assert_eq!(code(&missing), 1);
}

#[test]
fn bounds_lists_every_block() {
    let out = run(&[p("bounds"), &data("ieee14.json")]);
    assert_eq!(code(&out), 0);
    assert!(stdout(&out).contains("64800"));
}

#[test]
fn published_gains_fail_block_feasibility() {
    let out = run(&[p("certify"), &data("ieee14.json"), &data("gains_published.json")]);
    assert_eq!(code(&out), 3);
    assert!(stdout(&out).contains("FAILS"));
}

#[test]
fn synthesized_certificate_round_trips_and_tamper_is_caught() {
    let dir = tempfile::tempdir().unwrap();
    let (case, gains, cert) = triangle_files(dir.path());
    let ok = run(&[p("certify"), &case, &gains, p("--cert"), &cert]);
    assert_eq!(code(&ok), 0, "{}", stdout(&ok));
    assert!(stdout(&ok).contains("certificate accepted"));

    let mut g: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&gains).unwrap()).unwrap();
    let first = g.pointer_mut("/gains/1/0").expect("gain entry");
    *first = serde_json::json!(first.as_f64().unwrap() * 1.1);
    let tampered = dir.path().join("tampered.gains.json");
    std::fs::write(&tampered, g.to_string()).unwrap();
    let bad = run(&[p("certify"), &case, &tampered, p("--cert"), &cert]);
    assert_eq!(code(&bad), 3);
    assert!(stdout(&bad).contains("REJECTED"));
}

#[test]
fn simulate_then_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let (case, gains, _) = triangle_files(dir.path());
    let scenario = dir.path().join("sc.json");
    std::fs::write(
        &scenario,
        r#"{"events":[{"t":0.5,"kind":"load_step","params":{"bus":3,"dp":0.05,"dq":0.02}}],"sim":{"t_end":2.0,"dt":0.01}}"#,
    )
    .unwrap();
    let trace = dir.path().join("trace.csv");
    let out = run(&[p("simulate"), &case, &gains, &scenario, p("--out"), &trace]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(&trace).unwrap();
    assert!(text.starts_with("t,"));
    assert_eq!(text.lines().count(), 202);

    let m = run(&[p("metrics"), &trace]);
    assert_eq!(code(&m), 0);
    let v: serde_json::Value = serde_json::from_str(&stdout(&m)).unwrap();
    assert!(v["final_sharing_p"].as_f64().unwrap() >= 0.0);
}

#[test]
fn collapsing_load_is_a_numerical_failure() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = dir.path().join("sc.json");
    std::fs::write(
        &scenario,
        r#"{"events":[{"t":0.1,"kind":"load_step","params":{"bus":10,"dp":40.0,"dq":20.0}}],"sim":{"t_end":0.5,"dt":0.01}}"#,
    )
    .unwrap();
    let out = run(&[p("simulate"), &data("ieee14.json"), &data("gains_published.json"), &scenario]);
    assert_eq!(code(&out), 2);
}
