//! Runs the `stratascan` binary against synthetic images.

mod common;

use std::path::Path;
use std::process::{Command, Output};

use stratascan::detect::Tactic;
use stratascan::synth::LayerBuilder;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_stratascan")).args(args).env_remove("SOURCE_DATE_EPOCH").env_remove("RUST_LOG").output().unwrap()
}

fn text(b: &[u8]) -> String {
    String::from_utf8_lossy(b).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn detect_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let clean = common::write(&common::baseline(), tmp.path());
    let out = run(&["detect", s(&clean)]);
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["findings"].as_array().unwrap().len(), 0);

    let obscured = common::write(&common::tactic_image(Tactic::OsPkg), tmp.path());
    let out = run(&["detect", s(&obscured)]);
    assert_eq!(out.status.code(), Some(3));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(report["findings"].as_array().unwrap().iter().any(|f| f["tactic"] == "OSPKG" && f["status"] == "Deleted"));

    let table = run(&["detect", s(&obscured), "--format", "table"]);
    assert_eq!(table.status.code(), Some(3));
    assert!(text(&table.stdout).contains("/var/lib/dpkg"));
}

#[test]
fn scan_keeps_stdout_for_the_document() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = common::write(&common::baseline(), tmp.path());
    let out = run(&["scan", s(&dir), "--clock", "2024-02-03T04:05:06Z"]);
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
    let doc: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(doc["creationInfo"]["created"], "2024-02-03T04:05:06Z");
    assert!(text(&out.stderr).contains("packages"));

    let file = tmp.path().join("sbom.json");
    let out = run(&["scan", s(&dir), "--clock", "2024-02-03T04:05:06Z", "-o", s(&file)]);
    assert_eq!(out.status.code(), Some(0));
    assert!(text(&out.stdout).contains("coverage:"));
    assert_eq!(std::fs::read(&file).unwrap(), run(&["scan", s(&dir), "--clock", "2024-02-03T04:05:06Z"]).stdout);
}

#[test]
fn source_date_epoch_sets_the_clock() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = common::write(&common::baseline(), tmp.path());
    let out = Command::new(env!("CARGO_BIN_EXE_stratascan")).args(["scan", s(&dir)]).env("SOURCE_DATE_EPOCH", "1700000000").output().unwrap();
    let doc: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(doc["creationInfo"]["created"], "2023-11-14T22:13:20Z");
}

#[test]
fn failures_and_usage_errors() {
    let out = run(&["scan", "/does/not/exist"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(out.stdout.is_empty());
    assert!(!out.stderr.is_empty());

    assert_eq!(run(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(run(&["scan"]).status.code(), Some(2));
    assert_eq!(run(&["coverage", "x", "--format", "spdx-json"]).status.code(), Some(2));
    assert_eq!(run(&["--version"]).status.code(), Some(0));

    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.toml");
    std::fs::write(&bad, "[NOPE]\nx = [\"/a\"]\n").unwrap();
    let dir = common::write(&common::baseline(), tmp.path());
    assert_eq!(run(&["detect", s(&dir), "--patterns", s(&bad)]).status.code(), Some(2));
}

#[test]
fn pattern_file_extends_detection() {
    let tmp = tempfile::tempdir().unwrap();
    let img = common::baseline().layer(LayerBuilder::new("/bin/sh -c rm /app/settings.py").whiteout("/app/settings.py"));
    let dir = common::write(&img, tmp.path());
    assert_eq!(run(&["detect", s(&dir)]).status.code(), Some(0));
    let patterns = tmp.path().join("extra.toml");
    std::fs::write(&patterns, "[DEP]\nsite = [\"app/settings.py\"]\n").unwrap();
    let out = run(&["detect", s(&dir), "--patterns", s(&patterns)]);
    assert_eq!(out.status.code(), Some(3), "{}", text(&out.stderr));
}

#[test]
fn coverage_and_containerfile_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = common::write(&common::tactic_image(Tactic::Url), tmp.path());
    let cf = tmp.path().join("Containerfile");
    let out = run(&["coverage", s(&dir), "--format", "table", "--dump-containerfile", s(&cf)]);
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
    let table = text(&out.stdout);
    assert!(table.starts_with("coverage: "), "{table}");
    assert!(table.contains("layer   0:"));
    let containerfile = std::fs::read_to_string(&cf).unwrap();
    assert!(containerfile.contains(common::URL_DOWNLOAD), "{containerfile}");

    let json = run(&["coverage", s(&dir)]);
    let report: serde_json::Value = serde_json::from_slice(&json.stdout).unwrap();
    assert!(report["coverage"].as_f64().unwrap() > 0.5);
}

#[test]
fn docker_archive_input() {
    let tmp = tempfile::tempdir().unwrap();
    let tar = tmp.path().join("image.tar");
    common::baseline().write_docker_archive(&tar).unwrap();
    let out = run(&["scan", s(&tar), "--format", "report-json"]);
    assert_eq!(out.status.code(), Some(0), "{}", text(&out.stderr));
    let summary: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(summary["packages"].as_array().unwrap().len(), 8);
    assert_eq!(summary["history_aligned"], true);
}
