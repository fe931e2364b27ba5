use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures").join(name)
}

fn sentimtl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sentimtl")).args(args).output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

#[test]
fn help_and_bad_usage() {
    assert_eq!(code(&sentimtl(&["--help"])), 0);
    assert_eq!(code(&sentimtl(&[])), 1);
    assert_eq!(code(&sentimtl(&["frobnicate"])), 1);
}

#[test]
fn end_to_end_through_the_binary() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let config = fixture("trilevel.toml");
    let config = config.to_str().unwrap();

    let ingest = sentimtl(&["ingest", "--config", config, "--output-dir", out, "--strict"]);
    assert_eq!(code(&ingest), 0, "{}", String::from_utf8_lossy(&ingest.stderr));
    assert!(stdout(&ingest).contains("sl-doc"));

    let prep = sentimtl(&["preprocess", "--config", config, "--output-dir", out, "--strict"]);
    assert_eq!(code(&prep), 0, "{}", String::from_utf8_lossy(&prep.stderr));

    let bad = sentimtl(&["train", "--config", config, "--output-dir", out, "--scenario", "SL_ONLY"]);
    assert_eq!(code(&bad), 1);

    let train = sentimtl(&["train", "--config", config, "--output-dir", out, "--scenario", "SL_MTL_ZERO_HR"]);
    assert_eq!(code(&train), 0, "{}", String::from_utf8_lossy(&train.stderr));
    assert!(stdout(&train).contains("(0 hr training instances)"));

    let run_dir = dir.path().join("runs/SL_MTL_ZERO_HR-seed42");
    let run_dir = run_dir.to_str().unwrap();
    let eval = sentimtl(&["evaluate", "--run-dir", run_dir, "hr-doc", "sl-doc"]);
    assert_eq!(code(&eval), 0, "{}", String::from_utf8_lossy(&eval.stderr));
    assert!(stdout(&eval).contains("Majority class"));

    assert_eq!(code(&sentimtl(&["evaluate", "--run-dir", run_dir, "xx-doc"])), 1);

    let report = sentimtl(&["report", "--config", config, "--output-dir", out]);
    assert_eq!(code(&report), 0);
    assert!(stdout(&report).contains("SL_MTL_ZERO_HR"));
}

#[test]
fn missing_state_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("runs/HR_STL-seed1");
    assert_eq!(code(&sentimtl(&["evaluate", "--run-dir", missing.to_str().unwrap()])), 2);

    let config = fixture("trilevel.toml");
    let train = sentimtl(&[
        "train",
        "--config",
        config.to_str().unwrap(),
        "--output-dir",
        dir.path().to_str().unwrap(),
        "--scenario",
        "HR_STL",
    ]);
    assert_eq!(code(&train), 2);
}

#[test]
fn strict_mismatch_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(fixture("trilevel.toml")).unwrap();
    let text = text.replace("trilevel/", &format!("{}/", fixture("trilevel").display()));
    let text = text.replacen("neutral = 46", "neutral = 47", 1);
    let config = dir.path().join("bad.toml");
    std::fs::write(&config, text).unwrap();
    let out = sentimtl(&[
        "ingest",
        "--config",
        config.to_str().unwrap(),
        "--output-dir",
        dir.path().to_str().unwrap(),
        "--strict",
    ]);
    assert_eq!(code(&out), 4, "{}", String::from_utf8_lossy(&out.stderr));
}
