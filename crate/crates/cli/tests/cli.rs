use serde_json::Value;
use std::process::{Command, Output};

fn braingan(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_braingan")).args(args).output().unwrap()
}

#[test]
fn help_exits_zero() {
    for args in [&["--help"][..], &["prepare", "--help"], &["turing-serve", "--help"]] {
        let out = braingan(args);
        assert!(out.status.success(), "{args:?}");
        assert!(!out.stdout.is_empty());
    }
}

#[test]
fn usage_errors_are_json_with_exit_two() {
    let out = braingan(&["no-such-command"]);
    assert_eq!(out.status.code(), Some(2));
    let err: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"]["kind"], "usage");
}

#[test]
fn runtime_errors_are_json_with_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.json");
    let out = braingan(&["report", "--run", missing.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    let err: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert!(err["error"]["message"].as_str().is_some_and(|m| !m.is_empty()));
}

#[test]
fn phantom_prepare_and_augment_chain() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let p = |s: &str| root.join(s).to_str().unwrap().to_string();
    let out = braingan(&[
        "--seed", "3", "phantom-gen", "--out", &p("phantoms"), "--n-patients", "6",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let out = braingan(&["--seed", "3", "prepare", "--phantoms", &p("phantoms"), "--out", &p("dataset")]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let out = braingan(&[
        "--seed", "3", "augment", "--dataset", &p("dataset"), "--per-class", "5", "--out", &p("aug"),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(summary.is_object());
    assert!(root.join("aug").read_dir().unwrap().count() > 0);
}
