//! Exit codes and output shapes of the command-line front end.

#[path = "common/mod.rs"]
mod common;

use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value as Json;

use common::{cases, corpus_dir};

fn miniwfl(args: &[&str], scratch: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_miniwfl"))
        .args(args)
        .env("HOME", scratch)
        .current_dir(scratch)
        .output()
        .expect("binary runs")
}

fn case_path(case: &str, file: &str) -> String {
    corpus_dir().join(case).join(file).to_string_lossy().into_owned()
}

#[test]
fn corpus_exit_codes_through_the_binary() {
    for case in cases() {
        let job = case.dir.join("job.yml");
        if job.exists() && std::fs::read_to_string(&job).unwrap().contains("${CORPUS_TMP}") {
            continue;
        }
        let needs = case.expected["host_cores"].as_u64().unwrap_or(1);
        if needs > std::thread::available_parallelism().map(|n| n.get() as u64).unwrap_or(1) {
            continue;
        }
        let tmp = tempfile::tempdir().unwrap();
        let workflow = case.workflow().to_string_lossy().into_owned();
        let outdir = tmp.path().join("out").to_string_lossy().into_owned();
        let mut args = vec!["run", workflow.as_str(), "--outdir", outdir.as_str(), "--quiet", "--no-reuse"];
        let job_arg = job.to_string_lossy().into_owned();
        if job.exists() {
            args.insert(2, job_arg.as_str());
        }
        let out = miniwfl(&args, tmp.path());
        assert_eq!(
            out.status.code(),
            Some(case.expected_exit() as i32),
            "{}: stderr {}",
            case.name,
            String::from_utf8_lossy(&out.stderr)
        );
    }
}

#[test]
fn run_prints_output_object_with_published_paths() {
    let tmp = tempfile::tempdir().unwrap();
    let outdir = tmp.path().join("results");
    let cache = tmp.path().join("cache");
    let args = [
        "run",
        &case_path("01_grep_wc", "workflow.cwl"),
        &case_path("01_grep_wc", "job.yml"),
        "--outdir",
        outdir.to_str().unwrap(),
        "--cache-dir",
        cache.to_str().unwrap(),
    ];
    let out = miniwfl(&args, tmp.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let json: Json = serde_json::from_slice(&out.stdout).unwrap();
    let path = json["count"]["path"].as_str().unwrap();
    assert!(path.starts_with(outdir.canonicalize().unwrap().to_str().unwrap()));
    assert_eq!(std::fs::read_to_string(path).unwrap(), "3\n");
    assert!(outdir.join("provenance").read_dir().unwrap().count() >= 2);

    let again = miniwfl(&args, tmp.path());
    assert_eq!(again.status.code(), Some(0));
    assert_eq!(again.stdout, out.stdout);
    assert!(!outdir.join("count_2.txt").exists());
}

#[test]
fn validate_reports_json_lines() {
    let tmp = tempfile::tempdir().unwrap();
    let ok = miniwfl(&["validate", &case_path("01_grep_wc", "workflow.cwl")], tmp.path());
    assert_eq!(ok.status.code(), Some(0));

    let bad = miniwfl(&["validate", &case_path("23_cycle", "workflow.cwl")], tmp.path());
    assert_eq!(bad.status.code(), Some(1));
    let lines: Vec<Json> =
        String::from_utf8_lossy(&bad.stdout).lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert!(lines.iter().any(|d| d["code"] == "CycleDetected" && d["severity"] == "error"));

    let hint = miniwfl(&["validate", &case_path("10_hint_unknown", "workflow.cwl")], tmp.path());
    assert_eq!(hint.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&hint.stdout).contains("UnsupportedHint"));
}

#[test]
fn graph_prints_dot() {
    let tmp = tempfile::tempdir().unwrap();
    let out = miniwfl(&["graph", &case_path("29_diamond", "workflow.cwl")], tmp.path());
    assert_eq!(out.status.code(), Some(0));
    let dot = String::from_utf8_lossy(&out.stdout);
    assert!(dot.starts_with("digraph"));
    for step in ["root", "upper", "reverse", "join"] {
        assert!(dot.contains(step), "{dot}");
    }
}

#[test]
fn upgrade_and_its_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let tool = corpus_dir().join("tools").join("echo_v10.cwl");
    let out = miniwfl(&["upgrade", tool.to_str().unwrap()], tmp.path());
    assert_eq!(out.status.code(), Some(0));
    let doc = miniwfl::parse_document(&String::from_utf8_lossy(&out.stdout), None).unwrap();
    assert_eq!(doc.version.to_string(), "v1.2");

    let down =
        miniwfl(&["upgrade", &case_path("02_positions_prefixes", "workflow.cwl"), "--target", "v1.0"], tmp.path());
    assert_eq!(down.status.code(), Some(3));
    let unknown = miniwfl(&["upgrade", tool.to_str().unwrap(), "--target", "v9.9"], tmp.path());
    assert_eq!(unknown.status.code(), Some(3));
}

#[test]
fn usage_errors() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(miniwfl(&["frobnicate"], tmp.path()).status.code(), Some(3));
    assert_eq!(miniwfl(&["run", "--parallel", "0", "x.cwl"], tmp.path()).status.code(), Some(3));
    assert_eq!(miniwfl(&["--help"], tmp.path()).status.code(), Some(0));
    let missing = miniwfl(&["run", "does-not-exist.cwl"], tmp.path());
    assert_eq!(missing.status.code(), Some(1));
}
