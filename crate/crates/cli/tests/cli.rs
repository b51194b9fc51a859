use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn scenario(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join(format!("../../scenarios/{name}.json"))
}

fn offerfarm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_offerfarm"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn run_into(dir: &Path, name: &str, extra: &[&str]) -> Output {
    let scenario = scenario(name);
    let mut args = vec![
        "run",
        "--scenario",
        scenario.to_str().unwrap(),
        "--out",
        dir.to_str().unwrap(),
    ];
    args.extend_from_slice(extra);
    offerfarm(&args)
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn run_writes_log_metrics_and_summary() {
    let dir = TempDir::new().unwrap();
    let out = run_into(dir.path(), "service-churn", &[]);
    assert!(out.status.success(), "{out:?}");
    for file in ["events.ndjson", "metrics.csv", "summary.txt"] {
        assert!(dir.path().join(file).is_file(), "missing {file}");
    }
    let summary = fs::read_to_string(dir.path().join("summary.txt")).unwrap();
    assert_eq!(stdout(&out), summary);
    let metrics = fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    assert!(metrics.starts_with("metric,value\n"), "{metrics}");
}

#[test]
fn ndjson_format_writes_metrics_ndjson() {
    let dir = TempDir::new().unwrap();
    let out = run_into(dir.path(), "single-queue", &["--format", "ndjson"]);
    assert!(out.status.success(), "{out:?}");
    let text = fs::read_to_string(dir.path().join("metrics.ndjson")).unwrap();
    assert!(!dir.path().join("metrics.csv").exists());
    for line in text.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert!(v.get("metric").is_some(), "{line}");
    }
    let replay = offerfarm(&["replay", dir.path().join("events.ndjson").to_str().unwrap()]);
    assert!(replay.status.success(), "{replay:?}");
}

#[test]
fn seed_override_changes_the_log() {
    let a = TempDir::new().unwrap();
    let b = TempDir::new().unwrap();
    assert!(run_into(a.path(), "single-queue", &[]).status.success());
    assert!(run_into(b.path(), "single-queue", &["--seed", "99"])
        .status
        .success());
    let read = |d: &TempDir| fs::read(d.path().join("events.ndjson")).unwrap();
    assert_ne!(read(&a), read(&b));
}

#[test]
fn verify_does_not_change_outputs() {
    let plain = TempDir::new().unwrap();
    let checked = TempDir::new().unwrap();
    assert!(run_into(plain.path(), "failover", &[]).status.success());
    assert!(run_into(checked.path(), "failover", &["--verify"])
        .status
        .success());
    for file in ["events.ndjson", "metrics.csv", "summary.txt"] {
        assert_eq!(
            fs::read(plain.path().join(file)).unwrap(),
            fs::read(checked.path().join(file)).unwrap(),
            "{file}"
        );
    }
}

#[test]
fn malformed_scenario_exits_2() {
    let dir = TempDir::new().unwrap();
    let bad = dir.path().join("bad.json");
    fs::write(&bad, r#"{"name": "x", "seed": 1, "duration": -5}"#).unwrap();
    let out = offerfarm(&["run", "--scenario", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2), "{out:?}");
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("offerfarm: "));

    let missing = dir.path().join("nope.json");
    let out = offerfarm(&["run", "--scenario", missing.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2), "{out:?}");
}

#[test]
fn compare_needs_a_static_map() {
    let dir = TempDir::new().unwrap();
    let out = offerfarm(&[
        "compare",
        "--scenario",
        scenario("service-churn").to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2), "{out:?}");
    assert!(!dir.path().join("compare.csv").exists());
}

#[test]
fn compare_with_a_single_pool_ties() {
    let dir = TempDir::new().unwrap();
    let out = offerfarm(&[
        "compare",
        "--scenario",
        scenario("single-queue").to_str().unwrap(),
        "--seed",
        "1",
        "--seed",
        "2",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{out:?}");
    let mut reader = csv::Reader::from_path(dir.path().join("compare.csv")).unwrap();
    let headers = reader.headers().unwrap().clone();
    assert_eq!(
        headers.iter().collect::<Vec<_>>(),
        [
            "seed",
            "policy",
            "cpu_util",
            "mem_util",
            "p50_pr",
            "p90_pr",
            "builds_done",
            "verdict"
        ]
    );
    let rows: Vec<csv::StringRecord> = reader.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 4);
    assert!(rows.iter().all(|r| &r[7] == "tie"));
    // Both policies of a seed report identical numbers.
    for pair in rows.chunks(2) {
        assert_eq!(&pair[0][0], &pair[1][0]);
        assert_ne!(&pair[0][1], &pair[1][1]);
        assert!(pair[0]
            .iter()
            .zip(&pair[1])
            .skip(2)
            .take(5)
            .all(|(a, b)| a == b));
    }
    assert_eq!(stdout(&out).lines().count(), 3);
}

#[test]
fn replay_of_a_fresh_run_matches() {
    let dir = TempDir::new().unwrap();
    assert!(run_into(dir.path(), "cms-like", &[]).status.success());
    let out = offerfarm(&["replay", dir.path().join("events.ndjson").to_str().unwrap()]);
    assert!(out.status.success(), "{out:?}");
    assert!(stdout(&out).contains("metrics.csv: match"));
}

#[test]
fn truncated_log_exits_2() {
    let dir = TempDir::new().unwrap();
    assert!(run_into(dir.path(), "single-queue", &[]).status.success());
    let events = dir.path().join("events.ndjson");
    let text = fs::read_to_string(&events).unwrap();
    fs::write(&events, &text[..text.len() / 2]).unwrap();
    let out = offerfarm(&["replay", events.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2), "{out:?}");
}

#[test]
fn edited_log_exits_4() {
    let dir = TempDir::new().unwrap();
    assert!(run_into(dir.path(), "single-queue", &[]).status.success());
    let events = dir.path().join("events.ndjson");
    let text = fs::read_to_string(&events).unwrap();
    let edited = text.replacen(
        r#""kind":"TaskStaging","payload":{"task":"slc6-pr.b1","framework":"jenkins","agent":"node-01","resources":{"cpus":2.0,"#,
        r#""kind":"TaskStaging","payload":{"task":"slc6-pr.b1","framework":"jenkins","agent":"node-01","resources":{"cpus":1.0,"#,
        1,
    );
    assert_ne!(edited, text, "the first builder line moved");
    fs::write(&events, edited).unwrap();
    let out = offerfarm(&["replay", events.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(4), "{out:?}");
}
