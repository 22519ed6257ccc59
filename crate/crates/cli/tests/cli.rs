//! End-to-end checks of the command-line surface: the synth -> reconstruct
//! -> eval -> localize chain on a small dataset, plus exit codes.

use std::path::Path;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_surfelscope"))
}

fn small_spec(dir: &Path) -> std::path::PathBuf {
    let spec = serde_json::json!({
        "scene": {
            "extent": 100.0, "bumps": 6, "bump_amplitude": 4.0,
            "texture_cells": 60.0, "texture_contrast": 0.8, "seed": 3
        },
        "trajectory": {
            "kind": "zoom-in", "frames": 8, "amplitude": 6.0,
            "rot_amplitude_deg": 2.0, "standoff": 100.0, "fps": 30.0, "seed": 4
        },
        "intrinsics": {
            "fx": 200.0, "fy": 200.0, "cx": 119.5, "cy": 89.5,
            "width": 240, "height": 180, "baseline": 5.0
        },
        "gt_cloud_resolution": 150
    });
    let path = dir.join("spec.json");
    std::fs::write(&path, spec.to_string()).unwrap();
    path
}

#[test]
fn full_pipeline_smoke() {
    let dir = tempfile::tempdir().unwrap();
    let spec = small_spec(dir.path());
    let data = dir.path().join("data");
    let recon = dir.path().join("recon");

    let status = bin()
        .args(["synth", "--spec"])
        .arg(&spec)
        .arg("--out")
        .arg(&data)
        .status()
        .unwrap();
    assert!(status.success());
    assert!(data.join("gt_traj.txt").exists());
    assert!(data.join("gt_cloud.ply").exists());
    assert!(data.join("left/000000.png").exists());
    assert!(data.join("depth/000007.dpth").exists());

    // Deterministic given the seed: a second run produces identical frames.
    let data2 = dir.path().join("data2");
    let status = bin()
        .args(["synth", "--spec"])
        .arg(&spec)
        .arg("--out")
        .arg(&data2)
        .status()
        .unwrap();
    assert!(status.success());
    assert_eq!(
        std::fs::read(data.join("left/000003.png")).unwrap(),
        std::fs::read(data2.join("left/000003.png")).unwrap()
    );

    let status = bin()
        .arg("reconstruct")
        .arg("--input")
        .arg(&data)
        .arg("--out")
        .arg(&recon)
        .args(["--max-disparity", "32"])
        .status()
        .unwrap();
    assert!(status.success());
    for file in ["cloud.ply", "trajectory.txt", "timings.csv", "summary.json"] {
        assert!(recon.join(file).exists(), "missing {file}");
    }
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(recon.join("summary.json")).unwrap())
            .unwrap();
    assert_eq!(summary["frames"], 8);
    assert!(summary["mean_ms_per_frame"].as_f64().unwrap() > 0.0);

    // gt-depth run must not be worse than the zncc run
    let recon_gt = dir.path().join("recon_gt");
    let status = bin()
        .arg("reconstruct")
        .arg("--input")
        .arg(&data)
        .arg("--out")
        .arg(&recon_gt)
        .arg("--depth")
        .arg(format!("files:{}", data.join("depth").display()))
        .status()
        .unwrap();
    assert!(status.success());

    let ate_of = |traj: &Path| -> f64 {
        let out = bin()
            .arg("eval")
            .arg("ate")
            .arg("--gt")
            .arg(data.join("gt_traj.txt"))
            .arg("--est")
            .arg(traj)
            .output()
            .unwrap();
        assert!(out.status.success());
        let text = String::from_utf8(out.stdout).unwrap();
        text.split_whitespace().nth(1).unwrap().parse().unwrap()
    };
    let ate_zncc = ate_of(&recon.join("trajectory.txt"));
    let ate_gt = ate_of(&recon_gt.join("trajectory.txt"));
    assert!(ate_gt <= ate_zncc, "gt {ate_gt} vs zncc {ate_zncc}");
    assert!(ate_zncc < 2.0, "zncc ATE {ate_zncc} mm");

    // est == gt prints zero
    let out = bin()
        .arg("eval")
        .arg("ate")
        .arg("--gt")
        .arg(data.join("gt_traj.txt"))
        .arg("--est")
        .arg(data.join("gt_traj.txt"))
        .output()
        .unwrap();
    let text = String::from_utf8(out.stdout).unwrap();
    let value: f64 = text.split_whitespace().nth(1).unwrap().parse().unwrap();
    assert!(value < 1e-9);

    // localize a mapped frame against the saved map
    let pose_file = dir.path().join("pose.txt");
    let status = bin()
        .arg("localize")
        .arg("--map")
        .arg(recon.join("map"))
        .arg("--query")
        .arg(data.join("left/000005.png"))
        .arg("--out-pose")
        .arg(&pose_file)
        .status()
        .unwrap();
    assert!(status.success());
    let line = std::fs::read_to_string(&pose_file).unwrap();
    assert_eq!(line.trim().split_whitespace().count(), 8);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();

    // 1: usage (empty input dir)
    let empty = dir.path().join("empty");
    std::fs::create_dir_all(empty.join("left")).unwrap();
    std::fs::create_dir_all(empty.join("right")).unwrap();
    std::fs::write(
        empty.join("intrinsics.txt"),
        "fx 100\nfy 100\ncx 50\ncy 50\nwidth 100\nheight 100\nbaseline 5\n",
    )
    .unwrap();
    let status = bin()
        .arg("reconstruct")
        .arg("--input")
        .arg(&empty)
        .arg("--out")
        .arg(dir.path().join("out"))
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(1));

    // 1: unknown flag (argument parse failure)
    let status = bin().arg("--definitely-not-a-flag").status().unwrap();
    assert_eq!(status.code(), Some(1));

    // 2: malformed trajectory file
    let bad = dir.path().join("bad.txt");
    std::fs::write(&bad, "0 0 0 0 0 0 1\n").unwrap();
    let status = bin()
        .args(["eval", "ate", "--gt"])
        .arg(&bad)
        .arg("--est")
        .arg(&bad)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));

    // 0: help
    let status = bin().arg("--help").status().unwrap();
    assert_eq!(status.code(), Some(0));
}

#[test]
fn localization_failure_exit_code() {
    let dir = tempfile::tempdir().unwrap();
    let spec = small_spec(dir.path());
    let data = dir.path().join("data");
    let recon = dir.path().join("recon");
    assert!(bin()
        .args(["synth", "--spec"])
        .arg(&spec)
        .arg("--out")
        .arg(&data)
        .status()
        .unwrap()
        .success());
    assert!(bin()
        .arg("reconstruct")
        .arg("--input")
        .arg(&data)
        .arg("--out")
        .arg(&recon)
        .arg("--depth")
        .arg(format!("files:{}", data.join("depth").display()))
        .status()
        .unwrap()
        .success());

    // a blank query image cannot localize -> exit code 4
    let noise = dir.path().join("noise.png");
    {
        use surfelscope_core::io::{write_gray_image, GrayImage};
        let img = GrayImage::from_data(240, 180, vec![0.5; 240 * 180]).unwrap();
        write_gray_image(&img, &noise).unwrap();
    }
    let status = bin()
        .arg("localize")
        .arg("--map")
        .arg(recon.join("map"))
        .arg("--query")
        .arg(&noise)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(4));
}
