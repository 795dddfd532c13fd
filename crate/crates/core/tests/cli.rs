use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = "\
seed = 3

[synth]
count = 12
target_count = 2

[model]
batch_size = 16

[detect]
overlays = true
";

fn tiledefect(cwd: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tiledefect"))
        .current_dir(cwd)
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn full_chain_exits_zero_at_every_stage() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("pipeline.toml"), SMALL).unwrap();
    for stage in [
        "synth",
        "preprocess",
        "enhance",
        "train",
        "evaluate",
        "detect",
    ] {
        let out = tiledefect(
            dir.path(),
            &[
                stage,
                "--config",
                "pipeline.toml",
                "--out",
                "work",
                "--epochs",
                "2",
            ],
        );
        assert_eq!(code(&out), 0, "{stage}: {}", stderr(&out));
        let log = dir.path().join(format!("work/logs/{stage}.json"));
        let log: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(log).unwrap()).unwrap();
        // resolved config is echoed, defaults included
        assert_eq!(log["config"]["detect"]["threshold"], 0.7);
        assert_eq!(log["config"]["model"]["epochs"], 2);
        assert_eq!(log["seed"], 3);
    }
    let work = dir.path().join("work");
    for file in [
        "model/model.json",
        "model/params.bin",
        "eval/metrics.json",
        "eval/metrics.txt",
        "detect/detections.jsonl",
        "detect/summary.json",
        "detect/img0000_overlay.png",
        "balanced/train.json",
    ] {
        assert!(work.join(file).is_file(), "{file} missing");
    }
    let table = fs::read_to_string(work.join("eval/metrics.txt")).unwrap();
    assert!(table.contains("Accuracy  Precision  Recall  F1 Score"));
    assert!(!work.join(".tiledefect.lock").exists());
}

#[test]
fn detect_without_model_names_missing_path() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("pipeline.toml"), SMALL).unwrap();
    let out = tiledefect(
        dir.path(),
        &["synth", "--config", "pipeline.toml", "--out", "work"],
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let out = tiledefect(
        dir.path(),
        &["detect", "--config", "pipeline.toml", "--out", "work"],
    );
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("work/model"), "{}", stderr(&out));
}

#[test]
fn preprocess_of_empty_manifest_succeeds() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("pipeline.toml"), "").unwrap();
    fs::write(dir.path().join("empty.json"), r#"{"images": []}"#).unwrap();
    let out = tiledefect(
        dir.path(),
        &[
            "preprocess",
            "--config",
            "pipeline.toml",
            "--input",
            "empty.json",
            "--output",
            "tiles",
        ],
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let m: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("tiles/manifest.json")).unwrap())
            .unwrap();
    assert_eq!(m["entries"].as_array().unwrap().len(), 0);
}

#[test]
fn validation_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = tiledefect(dir.path(), &["synth"]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("--config"));

    fs::write(dir.path().join("bad.toml"), "[grid]\nm = 4\nn = 4\nk = 2\n").unwrap();
    let out = tiledefect(dir.path(), &["synth", "--config", "bad.toml"]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("bad.toml"));

    fs::write(dir.path().join("ok.toml"), "").unwrap();
    let out = tiledefect(
        dir.path(),
        &[
            "train",
            "--config",
            "ok.toml",
            "--backbone",
            "resnet101v2-class",
        ],
    );
    assert_eq!(code(&out), 1, "{}", stderr(&out));
}

#[test]
fn reruns_are_byte_identical() {
    let runs: Vec<_> = (0..2)
        .map(|_| {
            let dir = tempfile::tempdir().unwrap();
            fs::write(dir.path().join("pipeline.toml"), SMALL).unwrap();
            for stage in ["synth", "preprocess", "enhance"] {
                let out = tiledefect(
                    dir.path(),
                    &[stage, "--config", "pipeline.toml", "--out", "work"],
                );
                assert_eq!(code(&out), 0, "{stage}: {}", stderr(&out));
            }
            dir
        })
        .collect();
    for file in [
        "synth/source/manifest.json",
        "synth/source/img0003.png",
        "tiles/manifest.json",
        "balanced/manifest.json",
        "balanced/test.json",
    ] {
        let a = fs::read(runs[0].path().join("work").join(file)).unwrap();
        let b = fs::read(runs[1].path().join("work").join(file)).unwrap();
        assert_eq!(a, b, "{file} differs");
    }
}
