//! Drives the `legscan` binary through the full pipeline on a tiny dataset.

use legscan::dataset::{benchmark_views, load_dataset};
use legscan::eval::{evaluate_detections, ground_truth, read_detections, read_report, ASSOCIATION_DISTANCES};
use legscan::ppn::{regression_statistics, AnchorConfig, AnchorGrid, RegressionStats};
use std::path::Path;
use std::process::Command;

fn legscan(args: &[&str]) -> String {
    let out = Command::new(env!("CARGO_BIN_EXE_legscan")).args(args).output().unwrap();
    assert!(out.status.success(), "legscan {args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let ds_path = dir.path().join("d.h5");
    let seg = dir.path().join("seg.json");
    let ppn = dir.path().join("ppn.json");
    let dets = dir.path().join("dets.json");
    let report = dir.path().join("report.json");
    let curve = dir.path().join("curve.csv");

    legscan(&["generate", "--out", p(&ds_path), "--scans", "60", "--seed", "3"]);
    let ds = load_dataset(&ds_path).unwrap();
    assert_eq!(ds.len(), 60);
    let stats: RegressionStats = serde_json::from_str(&legscan(&["stats", "--dataset", p(&ds_path)])).unwrap();
    let anchors = AnchorConfig::default();
    let grid = AnchorGrid::from_config(&ds.meta, &anchors).unwrap();
    assert_eq!(stats, regression_statistics(&ds, &grid, anchors.tau).unwrap());

    legscan(&["train-seg", "--dataset", p(&ds_path), "--checkpoint", p(&seg), "--size", "toy", "--epochs", "1"]);
    legscan(&["detect-seg", "--dataset", p(&ds_path), "--checkpoint", p(&seg), "--out", p(&dets)]);
    legscan(&["evaluate", "--dataset", p(&ds_path), "--detections", p(&dets), "--out", p(&report)]);

    // the written report equals a library evaluation of the written detections
    let file = read_detections(&dets).unwrap();
    let (_, val) = benchmark_views(&ds).unwrap();
    assert_eq!(file.scan_indices, val);
    let expected = evaluate_detections(&file.detector, &file.per_scan().unwrap(), &ground_truth(&ds, &val).unwrap(), &ASSOCIATION_DISTANCES).unwrap();
    assert_eq!(read_report(&report).unwrap(), expected);

    legscan(&["curve", "--report", p(&report), "--out", p(&curve)]);
    assert!(std::fs::read_to_string(&curve).unwrap().starts_with("association_distance,"));

    legscan(&[
        "train-ppn", "--dataset", p(&ds_path), "--backbone", p(&seg), "--checkpoint", p(&ppn), "--epochs", "1",
    ]);
    legscan(&["detect-ppn", "--dataset", p(&ds_path), "--checkpoint", p(&ppn), "--out", p(&dets), "--view", "all"]);
    assert_eq!(read_detections(&dets).unwrap().scan_indices.len(), 60);
    legscan(&["bench", "--detector", "ppn", "--checkpoint", p(&ppn), "--dataset", p(&ds_path), "--scans", "5"]);
}

#[test]
fn bad_input_fails_cleanly() {
    let out = Command::new(env!("CARGO_BIN_EXE_legscan"))
        .args(["stats", "--dataset", "/nonexistent/x.h5"])
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(!String::from_utf8_lossy(&out.stderr).is_empty());
}
