use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn marketsim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_marketsim")).args(args).env("RUST_LOG", "warn").output().expect("binary runs")
}

fn pair(dir: &Path) -> (PathBuf, PathBuf) {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
    files.sort();
    let msg = files.iter().find(|p| p.to_string_lossy().contains("_message_")).unwrap().clone();
    let book = files.iter().find(|p| p.to_string_lossy().contains("_orderbook_")).unwrap().clone();
    (msg, book)
}

#[test]
fn gen_sample_then_realism_and_simulate() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let out = marketsim(&["gen-sample", "--out", data.to_str().unwrap(), "--orders", "2000", "--depth", "5"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let (msg, book) = pair(&data);
    assert!(msg.file_name().unwrap().to_string_lossy().starts_with("SYNTH_2026-01-05_34200000_"));

    let report = tmp.path().join("realism");
    let out = marketsim(&[
        "realism",
        "--lobster",
        msg.to_str().unwrap(),
        book.to_str().unwrap(),
        "--lobster",
        msg.to_str().unwrap(),
        book.to_str().unwrap(),
        "--grid-secs",
        "5",
        "--out",
        report.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(report.join("realism.json").exists());

    let config = tmp.path().join("config.json");
    let name = |p: &Path| p.file_name().unwrap().to_string_lossy().into_owned();
    let json = format!(
        r#"{{"messages": "data/{}", "book": "data/{}", "output": "runs", "world": "replay",
            "session": {{"end": "10:00:00"}}, "seeds": [3]}}"#,
        name(&msg),
        name(&book)
    );
    std::fs::write(&config, json).unwrap();
    let out = marketsim(&["simulate", "--config", config.to_str().unwrap(), "--seeds", "2"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for seed in ["seed-0", "seed-1"] {
        assert!(tmp.path().join("runs").join(seed).join("mid.csv").exists());
    }
}

#[test]
fn missing_config_fails_with_the_path() {
    let out = marketsim(&["simulate", "--config", "/nonexistent/config.json"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("/nonexistent/config.json"));
}

#[test]
fn unknown_mode_is_rejected() {
    let out = marketsim(&["simulate", "--config", "x.json", "--mode", "hybrid"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("expected cgan or replay"));
}
