use std::path::Path;
use std::process::{Command, Output};

fn horizon_nav(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_horizon-nav"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn path(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(horizon_nav(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(horizon_nav(&["eval", "--stack", "orca"]).status.code(), Some(1));
    let dir = tempfile::tempdir().unwrap();
    let out = horizon_nav(&["eval", "--stack", "fixed:0", "--out", path(dir.path())]);
    assert_eq!(out.status.code(), Some(1), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn runtime_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.jsonl");
    let out = horizon_nav(&["replay", "--log", path(&missing), "--out", path(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
    // A learned stack without its parameters.
    let out = horizon_nav(&["eval", "--stack", "full", "--episodes", "1", "--out", path(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn eval_writes_consistent_summary() {
    let dir = tempfile::tempdir().unwrap();
    let out = horizon_nav(&[
        "eval", "--stack", "orca", "--episodes", "6", "--scenario", "low", "--seed", "5", "--logs", "--out",
        path(dir.path()),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
    let rate = |k: &str| summary[k].as_f64().unwrap();
    assert!((rate("sr") + rate("cr") + rate("or") - 100.0).abs() < 1e-9, "{summary}");
    let csv = std::fs::read_to_string(dir.path().join("episodes.csv")).unwrap();
    assert_eq!(csv.lines().count(), 7);
    assert_eq!(std::fs::read_dir(dir.path().join("logs")).unwrap().count(), 6);

    // Replaying one of the logs yields an SVG document.
    let render = dir.path().join("render");
    let log = dir.path().join("logs/episode_0000.jsonl");
    let out = horizon_nav(&["replay", "--log", path(&log), "--out", path(&render)]);
    assert!(out.status.success());
    let text = std::fs::read_to_string(render.join("episode_0000.svg")).unwrap();
    roxmltree::Document::parse(&text).unwrap();
}

#[test]
fn sweep_writes_table_and_plot() {
    let dir = tempfile::tempdir().unwrap();
    let out = horizon_nav(&[
        "sweep", "--scenarios", "low,mid", "--horizons", "1,4", "--episodes", "2", "--out", path(dir.path()),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("scenario,h,sr,cr,or,ant"));
    assert_eq!(lines.count(), 4);
    let svg = std::fs::read_to_string(dir.path().join("sweep.svg")).unwrap();
    let doc = roxmltree::Document::parse(&svg).unwrap();
    let series = doc.descendants().filter(|n| n.attribute("class") == Some("series")).count();
    assert_eq!(series, 2);
}

#[test]
fn gradcheck_command_passes() {
    let out = horizon_nav(&["gradcheck"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stdout));
}
