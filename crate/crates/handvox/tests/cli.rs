//! End-to-end CLI behavior through the built binary: artifacts, exit codes
//! and reproducibility.

use std::path::Path;
use std::process::{Command, Output};

fn handvox(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_handvox"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).to_string()
}

#[test]
fn print_config_emits_parseable_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let out = handvox(&["print-config"], dir.path());
    assert!(out.status.success());
    let text = stdout(&out);
    assert!(text.contains("lr = 0.0003"));
    assert!(text.contains("batch_size = 4"));
    assert!(text.contains("epochs = 3"));
    assert!(text.contains("crop_size = 88"));
}

#[test]
fn synth_then_voxelize_disk_frame() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let out = handvox(
        &[
            "synth",
            "--subjects",
            "1",
            "--frames-per-subject",
            "2",
            "--out-dir",
            data.to_str().unwrap(),
        ],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let frame = data.join("S0/G0/000000_depth.bin");
    assert!(frame.is_file());
    assert!(data.join("S0/G0/joint.txt").is_file());
    assert!(data.join("runs.jsonl").is_file());

    let out = handvox(&["voxelize", "--frame", frame.to_str().unwrap()], dir.path());
    assert!(out.status.success());
    let text = stdout(&out);
    assert!(text.contains("grid_size: 88x88x88"));
    let occupied: usize = text
        .lines()
        .find(|l| l.starts_with("occupied_voxels:"))
        .and_then(|l| l.split(':').nth(1))
        .and_then(|v| v.trim().parse().ok())
        .unwrap();
    assert!(occupied > 100, "occupancy {occupied}");
}

#[test]
fn voxelize_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let out1 = dir.path().join("a");
    let out2 = dir.path().join("b");
    for out in [&out1, &out2] {
        let res = handvox(
            &[
                "voxelize",
                "--synthetic",
                "5",
                "--out-dir",
                out.to_str().unwrap(),
            ],
            dir.path(),
        );
        assert!(res.status.success());
    }
    let a = std::fs::read(out1.join("grid.bin")).unwrap();
    let b = std::fs::read(out2.join("grid.bin")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn voxelize_empty_frame_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    // Valid header, 4x4 bbox, all-zero depth: segmentation finds nothing.
    let path = dir.path().join("empty_depth.bin");
    let mut bytes = Vec::new();
    for v in [320i32, 240, 10, 10, 14, 14] {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    bytes.extend(std::iter::repeat_n(0u8, 16 * 4));
    std::fs::write(&path, bytes).unwrap();
    let out = handvox(&["voxelize", "--frame", path.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn voxelize_truncated_frame_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("short_depth.bin");
    let mut bytes = Vec::new();
    for v in [320i32, 240, 10, 10, 14, 14] {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    bytes.extend(std::iter::repeat_n(0u8, 10 * 4)); // 10 of 16 floats
    std::fs::write(&path, bytes).unwrap();
    let out = handvox(&["voxelize", "--frame", path.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn train_missing_dataset_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = handvox(
        &["train", "--data", "/nonexistent/handvox-data"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn train_eval_predict_pipeline_on_synthetic_data() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    // Tiny but real training run.
    let out = handvox(
        &[
            "train",
            "--synthetic",
            "4",
            "--input-size",
            "32",
            "--epochs",
            "2",
            "--max-steps",
            "2",
            "--seed",
            "9",
            "--out-dir",
            run.to_str().unwrap(),
        ],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(run.join("model.ckpt").is_file());
    assert!(run.join("model.json").is_file());
    assert!(run.join("loss_history.csv").is_file());
    assert!(run.join("runs.jsonl").is_file());
    let csv = std::fs::read_to_string(run.join("loss_history.csv")).unwrap();
    assert!(csv.starts_with("step,loss\n"));
    assert_eq!(csv.lines().count(), 3); // header + 2 steps

    // Oracle eval: forced-exact predictions give zero error, fractions 1.0.
    let eval_dir = dir.path().join("eval");
    let out = handvox(
        &[
            "eval",
            "--checkpoint",
            run.join("model.ckpt").to_str().unwrap(),
            "--synthetic",
            "6",
            "--oracle",
            "--out-dir",
            eval_dir.to_str().unwrap(),
        ],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let per_joint = std::fs::read_to_string(eval_dir.join("per_joint_error.csv")).unwrap();
    let mut lines = per_joint.lines();
    assert_eq!(lines.next(), Some("joint,mean_error_mm"));
    for line in lines {
        let err: f64 = line.split(',').nth(1).unwrap().parse().unwrap();
        assert_eq!(err, 0.0);
    }
    let curve = std::fs::read_to_string(eval_dir.join("success_curve.csv")).unwrap();
    let fractions: Vec<f64> = curve
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    assert!(fractions.iter().all(|f| *f == 1.0));
    // Monotone nondecreasing by construction.
    assert!(fractions.windows(2).all(|w| w[1] >= w[0]));

    // Real (non-oracle) eval emits a valid report too.
    let eval2 = dir.path().join("eval2");
    let out = handvox(
        &[
            "eval",
            "--checkpoint",
            run.join("model.ckpt").to_str().unwrap(),
            "--synthetic",
            "4",
            "--out-dir",
            eval2.to_str().unwrap(),
        ],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(eval2.join("eval_report.json")).unwrap())
            .unwrap();
    assert_eq!(report["frames_evaluated"], 4);
    assert!(report.get("wall_time_per_frame_ms").is_none());
    let curve = report["success_curve"].as_array().unwrap();
    let fractions: Vec<f64> = curve
        .iter()
        .map(|p| p[1].as_f64().unwrap())
        .collect();
    assert!(fractions.windows(2).all(|w| w[1] >= w[0]));

    // Prediction on a synthetic frame: 21 joints, deterministic.
    let mut preds = Vec::new();
    for _ in 0..2 {
        let out = handvox(
            &[
                "predict",
                "--checkpoint",
                run.join("model.ckpt").to_str().unwrap(),
                "--synthetic",
                "3",
            ],
            dir.path(),
        );
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        preds.push(stdout(&out));
    }
    assert_eq!(preds[0], preds[1]);
    let parsed: serde_json::Value = serde_json::from_str(&preds[0]).unwrap();
    let joints = parsed["joints_mm"].as_array().unwrap();
    assert_eq!(joints.len(), 21);
    for j in joints {
        assert_eq!(j.as_array().unwrap().len(), 3);
    }
}

#[test]
fn bench_reports_statistics() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("bench");
    let out = handvox(
        &[
            "bench",
            "--frames",
            "5",
            "--warmup",
            "1",
            "--input-size",
            "24",
            "--base-channels",
            "2",
            "--end-to-end",
            "--out-dir",
            out_dir.to_str().unwrap(),
        ],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = stdout(&out);
    assert!(text.contains("hardware:"));
    assert!(text.contains("mean"));
    assert!(text.contains("p50"));
    assert!(text.contains("p99"));
    assert!(text.contains("end-to-end"));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("bench_report.json")).unwrap())
            .unwrap();
    assert!(report["forward"]["mean_ms"].as_f64().unwrap() > 0.0);
}

#[test]
fn identical_seeds_reproduce_loss_history() {
    let dir = tempfile::tempdir().unwrap();
    let mut histories = Vec::new();
    for name in ["r1", "r2"] {
        let run = dir.path().join(name);
        let out = handvox(
            &[
                "train",
                "--synthetic",
                "4",
                "--input-size",
                "32",
                "--epochs",
                "1",
                "--seed",
                "77",
                "--out-dir",
                run.to_str().unwrap(),
            ],
            dir.path(),
        );
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        histories.push(std::fs::read(run.join("loss_history.csv")).unwrap());
    }
    assert_eq!(histories[0], histories[1]);
}
