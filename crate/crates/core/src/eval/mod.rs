//! Benchmark protocol: per-scan matching, a global precision/recall curve,
//! and the AP (11-point), Peak-F1 and EER summaries.
//!
//! Detections below score 0.01 or beyond 10 m are ignored, and so are
//! ground-truth people beyond 10 m. Within a scan, detections are taken
//! in descending score order (ties by position in the list) and each claims
//! the nearest unclaimed ground truth within the association distance.

mod bench;
mod io;

pub use bench::{latency_bench, LatencyStats, WARMUP_SCANS};
pub use io::{
    read_detections, read_report, render_curve_csv, write_curve_csv, write_detections, write_report, DetectionFile,
    DetectionRecord, DETECTIONS_FORMAT, DETECTIONS_VERSION, REPORT_FORMAT, REPORT_VERSION,
};

use crate::dataset::{Dataset, DatasetError};
use crate::detector::{Detector, DetectorError};
use crate::geometry::PersonCircle;
use serde::{Deserialize, Serialize};
use std::cmp::Ordering;
use std::path::PathBuf;
use thiserror::Error;

pub const MIN_SCORE: f64 = 0.01;
pub const MAX_RANGE: f64 = 10.0;
pub const ASSOCIATION_DISTANCES: [f64; 2] = [0.5, 0.3];

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no ground-truth people in the evaluated view")]
    NoGroundTruth,
    #[error("{detections} detection lists for {scans} scans")]
    ScanCount { detections: usize, scans: usize },
    #[error("detection for scan {0}, which is outside the evaluated view")]
    ScanIndex(usize),
    #[error(transparent)]
    Detector(#[from] DetectorError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
}

fn score_of(c: &PersonCircle) -> f64 {
    c.confidence()
}

/// Drops detections scoring below 0.01 or centered beyond 10 m.
pub fn filter_detections(dets: &[PersonCircle]) -> Vec<PersonCircle> {
    dets.iter()
        .filter(|d| score_of(d) >= MIN_SCORE && d.center().norm() <= MAX_RANGE)
        .cloned()
        .collect()
}

/// Ground truth inside the evaluated range.
pub fn filter_ground_truth(gts: &[PersonCircle]) -> Vec<PersonCircle> {
    gts.iter().filter(|g| g.center().norm() <= MAX_RANGE).cloned().collect()
}

/// Indices of `dets` by descending score, ties by index.
pub fn score_order(dets: &[PersonCircle]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| score_of(&dets[b]).partial_cmp(&score_of(&dets[a])).unwrap_or(Ordering::Equal));
    order
}

/// True-positive flag per detection, in input order.
pub fn match_scan(dets: &[PersonCircle], gts: &[PersonCircle], d: f64) -> Vec<bool> {
    let mut tp = vec![false; dets.len()];
    let mut claimed = vec![false; gts.len()];
    for i in score_order(dets) {
        let c = dets[i].center();
        let mut best: Option<(usize, f64)> = None;
        for (k, g) in gts.iter().enumerate() {
            if claimed[k] {
                continue;
            }
            let dist = c.distance(&g.center());
            if dist <= d && best.is_none_or(|(_, b)| dist < b) {
                best = Some((k, dist));
            }
        }
        if let Some((k, _)) = best {
            claimed[k] = true;
            tp[i] = true;
        }
    }
    tp
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
    pub tp: usize,
    pub fp: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrCurve {
    pub points: Vec<CurvePoint>,
    pub total_gt: usize,
}

/// Cumulative counts over `(score, is_tp)` pairs in descending score
/// order, one point per distinct score.
pub fn pr_curve(labeled: &[(f64, bool)], total_gt: usize) -> Result<PrCurve, EvalError> {
    if total_gt == 0 {
        return Err(EvalError::NoGroundTruth);
    }
    let mut sorted = labeled.to_vec();
    sorted.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap_or(Ordering::Equal));
    let mut points = Vec::new();
    let (mut tp, mut fp) = (0usize, 0usize);
    for (i, &(score, hit)) in sorted.iter().enumerate() {
        if hit {
            tp += 1;
        } else {
            fp += 1;
        }
        let last_of_group = sorted.get(i + 1).is_none_or(|next| next.0 != score);
        if last_of_group {
            points.push(CurvePoint {
                threshold: score,
                precision: tp as f64 / (tp + fp) as f64,
                recall: tp as f64 / total_gt as f64,
                tp,
                fp,
            });
        }
    }
    Ok(PrCurve { points, total_gt })
}

/// Mean over recall levels 0, 0.1, .., 1 of the best precision at recall
/// at least that level (0 when none).
pub fn average_precision_11pt(curve: &PrCurve) -> f64 {
    let mut total = 0.0;
    for k in 0..=10 {
        let r = k as f64 / 10.0;
        let best = curve
            .points
            .iter()
            .filter(|p| p.recall >= r)
            .map(|p| p.precision)
            .fold(0.0, f64::max);
        total += best;
    }
    total / 11.0
}

fn f1(p: &CurvePoint) -> f64 {
    if p.precision + p.recall == 0.0 {
        0.0
    } else {
        2.0 * p.precision * p.recall / (p.precision + p.recall)
    }
}

pub fn peak_f1(curve: &PrCurve) -> f64 {
    curve.points.iter().map(f1).fold(0.0, f64::max)
}

/// `(P + R) / 2` at the point minimizing `|P - R|`, ties to the higher F1.
pub fn eer(curve: &PrCurve) -> f64 {
    let mut best: Option<&CurvePoint> = None;
    for p in &curve.points {
        best = match best {
            None => Some(p),
            Some(b) => {
                let (gp, gb) = ((p.precision - p.recall).abs(), (b.precision - b.recall).abs());
                if gp < gb || (gp == gb && f1(p) > f1(b)) {
                    Some(p)
                } else {
                    Some(b)
                }
            }
        };
    }
    best.map_or(0.0, |p| 0.5 * (p.precision + p.recall))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceResult {
    pub association_distance: f64,
    pub ap: f64,
    pub peak_f1: f64,
    pub eer: f64,
    pub curve: PrCurve,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub format: String,
    pub version: u32,
    pub detector: String,
    pub num_scans: usize,
    pub num_detections: usize,
    pub results: Vec<DistanceResult>,
}

impl Report {
    pub fn at(&self, d: f64) -> Option<&DistanceResult> {
        self.results.iter().find(|r| r.association_distance == d)
    }
}

/// Scores pre-computed detections. `detections[i]` and `ground_truth[i]`
/// belong to the same scan.
pub fn evaluate_detections(
    detector: &str,
    detections: &[Vec<PersonCircle>],
    ground_truth: &[Vec<PersonCircle>],
    distances: &[f64],
) -> Result<Report, EvalError> {
    if detections.len() != ground_truth.len() {
        return Err(EvalError::ScanCount {
            detections: detections.len(),
            scans: ground_truth.len(),
        });
    }
    let dets: Vec<Vec<PersonCircle>> = detections.iter().map(|d| filter_detections(d)).collect();
    let gts: Vec<Vec<PersonCircle>> = ground_truth.iter().map(|g| filter_ground_truth(g)).collect();
    let total_gt = gts.iter().map(Vec::len).sum();
    let num_detections = dets.iter().map(Vec::len).sum();
    let mut results = Vec::with_capacity(distances.len());
    for &d in distances {
        let mut labeled = Vec::with_capacity(num_detections);
        for (sd, sg) in dets.iter().zip(&gts) {
            let tp = match_scan(sd, sg, d);
            labeled.extend(sd.iter().zip(tp).map(|(c, t)| (score_of(c), t)));
        }
        let curve = pr_curve(&labeled, total_gt)?;
        results.push(DistanceResult {
            association_distance: d,
            ap: average_precision_11pt(&curve),
            peak_f1: peak_f1(&curve),
            eer: eer(&curve),
            curve,
        });
    }
    Ok(Report {
        format: REPORT_FORMAT.into(),
        version: REPORT_VERSION,
        detector: detector.into(),
        num_scans: detections.len(),
        num_detections,
        results,
    })
}

/// Runs `detector` over the listed scans.
pub fn run_detector(detector: &dyn Detector, ds: &Dataset, indices: &[usize]) -> Result<Vec<Vec<PersonCircle>>, EvalError> {
    indices.iter().map(|&i| Ok(detector.detect(&ds.scan(i)?)?)).collect()
}

pub fn ground_truth(ds: &Dataset, indices: &[usize]) -> Result<Vec<Vec<PersonCircle>>, EvalError> {
    indices.iter().map(|&i| Ok(ds.annotations(i)?)).collect()
}

/// Full chain for one detector on a view of a dataset.
pub fn evaluate(detector: &dyn Detector, ds: &Dataset, indices: &[usize], distances: &[f64]) -> Result<Report, EvalError> {
    let dets = run_detector(detector, ds, indices)?;
    evaluate_detections(detector.name(), &dets, &ground_truth(ds, indices)?, distances)
}

/// Detects nothing.
#[derive(Debug, Clone, Copy, Default)]
pub struct EmptyDetector;

impl Detector for EmptyDetector {
    fn name(&self) -> &'static str {
        "empty"
    }

    fn detect(&self, _scan: &crate::geometry::LaserScan) -> Result<Vec<PersonCircle>, DetectorError> {
        Ok(Vec::new())
    }
}

/// Ground truth with score 1.0 for each scan.
pub fn oracle_detections(ds: &Dataset, indices: &[usize]) -> Result<Vec<Vec<PersonCircle>>, EvalError> {
    Ok(ground_truth(ds, indices)?
        .into_iter()
        .map(|g| g.into_iter().map(|c| c.with_score(1.0)).collect())
        .collect())
}

#[cfg(test)]
mod tests;
