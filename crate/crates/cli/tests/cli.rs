use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use rollsense_core::GrayImage;

fn rollsense(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rollsense")).args(args).current_dir(dir).output().unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn unknown_config_key_exits_with_config_code() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("run.toml"), "[stitch]\npatch_hieght = 70\n").unwrap();
    let out = rollsense(&["--config", "run.toml", "evaluate", "a.png", "b.png"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("patch_hieght"));
}

#[test]
fn missing_frames_exit_with_input_code() {
    let dir = tempfile::tempdir().unwrap();
    let out = rollsense(&["stitch", "--frames", "nowhere"], dir.path());
    assert_eq!(out.status.code(), Some(3));
    assert!(stderr(&out).contains("nowhere"));
}

#[test]
fn missing_frames_flag_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(rollsense(&["calibrate"], dir.path()).status.code(), Some(2));
}

#[test]
fn evaluate_mismatched_sizes_is_a_pipeline_error() {
    let dir = tempfile::tempdir().unwrap();
    GrayImage::new(20, 20).save(dir.path().join("a.png")).unwrap();
    GrayImage::new(21, 20).save(dir.path().join("b.png")).unwrap();
    let out = rollsense(&["--out-dir", "o", "evaluate", "a.png", "b.png"], dir.path());
    assert_eq!(out.status.code(), Some(4));
    assert!(stderr(&out).contains("dimension mismatch"), "{}", stderr(&out));
}

#[test]
fn evaluate_identical_images_reports_inf() {
    let dir = tempfile::tempdir().unwrap();
    GrayImage::from_fn(32, 32, |x, y| image::Luma([(x * 7 + y * 3) as u8])).save(dir.path().join("a.png")).unwrap();
    let out = rollsense(&["--out-dir", "o", "evaluate", "a.png", "a.png"], dir.path());
    assert!(out.status.success(), "{}", stderr(&out));
    let report = fs::read_to_string(dir.path().join("o/evaluate.report.toml")).unwrap();
    assert!(report.contains("psnr_db = inf"));
    assert!(report.contains("ssim = 1.0"));
    assert!(report.contains("schema_version = 1"));
}

#[test]
fn blank_calibration_frames_fail_in_the_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    fs::create_dir(dir.path().join("grid")).unwrap();
    for i in 0..3 {
        GrayImage::from_pixel(640, 480, image::Luma([20])).save(dir.path().join(format!("grid/frame_{i:04}.png"))).unwrap();
    }
    let out = rollsense(&["--out-dir", "o", "calibrate", "--frames", "grid"], dir.path());
    assert_eq!(out.status.code(), Some(4));
    assert!(stderr(&out).contains("calibrate failed"));
}

#[test]
fn simulated_taps_localize_through_the_cli() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("run.toml"), "[simulate]\nscenes = [\"grid\", \"taps\"]\npose = { theta = 0.04, d = 1.0 }\n")
        .unwrap();
    let ok = |args: &[&str]| {
        let out = rollsense(args, dir.path());
        assert!(out.status.success(), "{args:?}: {}", stderr(&out));
    };
    ok(&["--config", "run.toml", "--out-dir", "sim", "simulate"]);
    ok(&["--out-dir", "cal", "calibrate", "--frames", "sim/grid"]);
    let cal = fs::read_to_string(dir.path().join("cal/calibration.toml")).unwrap();
    let cal: toml::Table = toml::from_str(&cal).unwrap();
    assert!((cal["theta"].as_float().unwrap() - 0.04).abs() < 1e-3);
    assert!((cal["d"].as_float().unwrap() - 1.0).abs() < 0.05);
    ok(&[
        "--out-dir",
        "loc",
        "localize",
        "--frames",
        "sim/taps",
        "--calibration",
        "cal/calibration.toml",
        "--truth",
        "sim/taps/manifest.toml",
    ]);
    let report: toml::Table =
        toml::from_str(&fs::read_to_string(dir.path().join("loc/localize.report.toml")).unwrap()).unwrap();
    let eval = report["outputs"]["evaluation"].as_table().unwrap();
    assert!(eval["mean_mm"].as_float().unwrap() < 0.5);
    assert_eq!(eval["cells"].as_array().unwrap().len(), 15);
}

#[test]
fn rgb_frames_are_accepted() {
    let dir = tempfile::tempdir().unwrap();
    fs::create_dir(dir.path().join("f")).unwrap();
    for i in 0..3u8 {
        image::RgbImage::from_fn(640, 480, |x, y| image::Rgb([(x + y * 3 + i as u32 * 5) as u8, 10, 200]))
            .save(dir.path().join(format!("f/{i}.png")))
            .unwrap();
    }
    let out = rollsense(&["--out-dir", "o", "stitch", "--frames", "f"], dir.path());
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(dir.path().join("o/map.png").exists());
}
