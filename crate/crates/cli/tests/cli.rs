use std::path::Path;
use std::process::{Command, Output};

fn semloc(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_semloc"))
        .args(args)
        .current_dir(dir)
        .env("SEMLOC_LOG", "warn")
        .output()
        .unwrap()
}

#[test]
fn malformed_input_fails_with_its_line_number() {
    let dir = tempfile::tempdir().unwrap();
    assert!(semloc(&["simulate", "--out", "sim"], dir.path()).status.success());
    let frames = dir.path().join("sim/mapping_frames.jsonl");
    let text = std::fs::read_to_string(&frames).unwrap();
    let mut lines: Vec<&str> = text.lines().collect();
    lines[2] = "{\"frame_id\": 2, \"detections\": []}";
    std::fs::write(&frames, lines.join("\n")).unwrap();
    let out = semloc(&["build-map", "--config", "sim/run.toml"], dir.path());
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("mapping_frames.jsonl: line 3"), "{err}");
}

#[test]
fn missing_inputs_are_named() {
    let dir = tempfile::tempdir().unwrap();
    let out = semloc(&["localize"], dir.path());
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("localize.floor_plan"));
    let out = semloc(&["eval"], dir.path());
    assert!(!out.status.success());
}

#[test]
fn print_config_applies_flags() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("run.toml"), "runs = 3\n[localize.mcl]\nn_particles = 200\n").unwrap();
    let out = semloc(&["localize", "--config", "run.toml", "--print-config", "--seed", "9", "--sensor-model", "o"], dir.path());
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    for needle in ["seed = 9", "runs = 3", "n_particles = 200", "sensor_model = \"o\""] {
        assert!(text.contains(needle), "{needle} missing from\n{text}");
    }
    let bad = semloc(&["localize", "--sensor-model", "lidar", "--print-config"], dir.path());
    assert!(!bad.status.success());
}

#[test]
fn empty_detection_stream_gives_empty_labels() {
    let dir = tempfile::tempdir().unwrap();
    assert!(semloc(&["simulate", "--out", "sim"], dir.path()).status.success());
    std::fs::write(dir.path().join("sim/detections_2d.jsonl"), "").unwrap();
    assert!(semloc(&["annotate", "--config", "sim/run.toml"], dir.path()).status.success());
    let labels = std::fs::read_to_string(dir.path().join("sim/results/labels.jsonl")).unwrap();
    assert!(labels.lines().count() > 0);
    assert!(labels.lines().all(|l| l.ends_with("\"labels\":[]}")));
}
