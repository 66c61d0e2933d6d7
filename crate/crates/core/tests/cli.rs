use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn capnet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_capnet"))
        .args(args)
        .env_remove("CAPNET_SEED")
        .output()
        .expect("spawn capnet")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write_config(dir: &Path, charset: &str) -> std::path::PathBuf {
    let path = dir.join(format!("run_{}.json", charset.len()));
    let json = format!(
        r#"{{"charset": "{charset}",
            "model": {{"filters": [2, 2, 4, 4], "dense_width": 16, "dropout": 0.0}},
            "train": {{"epochs": 1, "batch_size": 8}}}}"#
    );
    fs::write(&path, json).unwrap();
    path
}

#[test]
fn generate_train_eval_analyze() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "0123456789");
    let data = dir.path().join("data");
    let out = capnet(&["generate", "--count", "16", "--seed", "3", "--config", s(&cfg), "--out", s(&data)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(data.join("manifest.csv").is_file());
    assert!(data.join("000015.pgm").is_file());

    let model = dir.path().join("m.capn");
    let hist = dir.path().join("hist");
    let out = capnet(&[
        "train", "--config", s(&cfg), "--data", s(&data), "--test-data", s(&data),
        "--model-out", s(&model), "--history-out", s(&hist),
    ]);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(stdout.contains("test: char_accuracy"), "{stdout}");
    for f in ["history.csv", "accuracy.svg", "loss.svg"] {
        assert!(hist.join(f).is_file(), "missing {f}");
    }

    let metrics = dir.path().join("metrics.json");
    let out = capnet(&["eval", "--model", s(&model), "--data", s(&data), "--metrics-out", s(&metrics)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let m: serde_json::Value = serde_json::from_slice(&fs::read(&metrics).unwrap()).unwrap();
    assert!(m["char_accuracy"].as_f64().unwrap() <= 1.0);

    let report = dir.path().join("report");
    let out = capnet(&["analyze", "--oracle", "--data", s(&data), "--report-dir", s(&report)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let r: serde_json::Value = serde_json::from_slice(&fs::read(report.join("vuln_report.json")).unwrap()).unwrap();
    assert_eq!(r["full_accuracy"].as_f64(), Some(1.0));
}

#[test]
fn seed_comes_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str, seed: &str| {
        let out = dir.path().join(name);
        let status = Command::new(env!("CARGO_BIN_EXE_capnet"))
            .args(["generate", "--count", "3", "--out", s(&out)])
            .env("CAPNET_SEED", seed)
            .output()
            .unwrap()
            .status;
        assert!(status.success());
        fs::read(out.join("manifest.csv")).unwrap()
    };
    assert_eq!(run("a", "5"), run("b", "5"));
    assert_ne!(run("a", "5"), run("c", "6"));
}

#[test]
fn charset_mismatch_names_both_sets() {
    let dir = tempfile::tempdir().unwrap();
    let digits = write_config(dir.path(), "0123456789");
    let abc = write_config(dir.path(), "abc");
    let (d_data, a_data) = (dir.path().join("d"), dir.path().join("a"));
    assert!(capnet(&["generate", "--count", "8", "--config", s(&digits), "--out", s(&d_data)]).status.success());
    assert!(capnet(&["generate", "--count", "8", "--config", s(&abc), "--out", s(&a_data)]).status.success());
    let model = dir.path().join("m.capn");
    let out = capnet(&["train", "--config", s(&digits), "--data", s(&d_data), "--model-out", s(&model),
        "--history-out", s(dir.path())]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let out = capnet(&["eval", "--model", s(&model), "--data", s(&a_data),
        "--metrics-out", s(&dir.path().join("m.json"))]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("0123456789") && err.contains("abc"), "{err}");
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope");
    assert_eq!(capnet(&["eval", "--oracle", "--data", s(&missing)]).status.code(), Some(2));
    assert_eq!(capnet(&["train"]).status.code(), Some(1));
    assert_eq!(capnet(&["generate", "--count", "1"]).status.code(), Some(1));

    let bad = dir.path().join("bad.json");
    fs::write(&bad, r#"{"distortion": {"rotation_deg": 10, "typo": 1}}"#).unwrap();
    let out = capnet(&["generate", "--count", "1", "--config", s(&bad), "--out", s(&missing)]);
    assert_eq!(out.status.code(), Some(1));

    assert_eq!(capnet(&["--help"]).status.code(), Some(0));
}

#[test]
fn gradcheck_command_passes() {
    let out = capnet(&["gradcheck"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stdout));
    assert!(String::from_utf8_lossy(&out.stdout).contains("gradcheck passed"));
}
