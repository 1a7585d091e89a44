use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn pumpsurge(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pumpsurge")).args(args).output().unwrap()
}

#[test]
fn usage_errors_exit_with_two() {
    assert_eq!(pumpsurge(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(pumpsurge(&["solve"]).status.code(), Some(2));
    assert_eq!(pumpsurge(&["train", "--preset", "huge"]).status.code(), Some(2));
}

#[test]
fn version_names_the_tool() {
    let out = pumpsurge(&["--version"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("pumpsurge "), "{text}");
}

#[test]
fn solve_prints_heads_and_json() {
    let out = pumpsurge(&["solve", "--speeds", "0.9"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("node,head,pressure"));
    assert!(text.lines().count() > 20);

    let out = pumpsurge(&["--json", "solve", "--speeds", "0.9"]);
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(v.is_object());
}

#[test]
fn missing_run_is_a_runtime_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = pumpsurge(&["--json", "report", "--from", tmp.path().join("nope").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
}

fn snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_file())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    files.sort();
    files
}

#[test]
fn train_evaluate_report_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    let runs = tmp.path().to_str().unwrap();
    let out = pumpsurge(&["train", "--steps", "600", "--name", "tiny", "--runs-dir", runs]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let run = tmp.path().join("tiny");
    for f in ["config.toml", "scenarios.jsonl", "trainlog.csv"] {
        assert!(run.join(f).is_file(), "{f}");
    }
    let header = fs::read_to_string(run.join("trainlog.csv")).unwrap();
    assert_eq!(
        header.lines().next().unwrap(),
        "step,episode,reward,episode_reward,loss,epsilon,val_value_ratio,val_episode_len"
    );

    let run_s = run.to_str().unwrap();
    let out = pumpsurge(&["evaluate", "--run", run_s, "--traces"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(run.join("report/test.csv").is_file());
    assert!(run.join("report/traces").is_dir());

    assert!(pumpsurge(&["report", "--from", run_s]).status.success());
    let first = snapshot(&run.join("report"));
    assert!(pumpsurge(&["report", "--from", run_s]).status.success());
    assert_eq!(first, snapshot(&run.join("report")));
}
