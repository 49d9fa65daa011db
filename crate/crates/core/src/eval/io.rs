//! Detection and report files.
//!
//! Detections are JSON: `{format, version, detector, scan_indices,
//! detections: [{scan_index, score, x, y}]}` where `scan_index` is the row
//! in the dataset file and `scan_indices` lists the evaluated view.
//! Reports are JSON as well; curves export as CSV with one row per point.

use super::{EvalError, Report};
use crate::geometry::PersonCircle;
use crate::lfe::NOMINAL_RADIUS;
use serde::{Deserialize, Serialize};
use std::path::Path;

pub const DETECTIONS_FORMAT: &str = "legscan-detections";
pub const DETECTIONS_VERSION: u32 = 1;
pub const REPORT_FORMAT: &str = "legscan-report";
pub const REPORT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub scan_index: usize,
    pub score: f64,
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionFile {
    pub format: String,
    pub version: u32,
    pub detector: String,
    /// Scans of the evaluated view, in order.
    pub scan_indices: Vec<usize>,
    pub detections: Vec<DetectionRecord>,
}

impl DetectionFile {
    pub fn new(detector: &str, scan_indices: &[usize], per_scan: &[Vec<PersonCircle>]) -> Self {
        let detections = scan_indices
            .iter()
            .zip(per_scan)
            .flat_map(|(&scan_index, dets)| {
                dets.iter().map(move |c| DetectionRecord {
                    scan_index,
                    score: c.confidence(),
                    x: c.x,
                    y: c.y,
                })
            })
            .collect();
        Self {
            format: DETECTIONS_FORMAT.into(),
            version: DETECTIONS_VERSION,
            detector: detector.into(),
            scan_indices: scan_indices.to_vec(),
            detections,
        }
    }

    /// Detections grouped per scan of `scan_indices`, in file order.
    pub fn per_scan(&self) -> Result<Vec<Vec<PersonCircle>>, EvalError> {
        let mut out = vec![Vec::new(); self.scan_indices.len()];
        let slot: std::collections::HashMap<usize, usize> =
            self.scan_indices.iter().enumerate().map(|(k, &i)| (i, k)).collect();
        for d in &self.detections {
            let k = *slot.get(&d.scan_index).ok_or(EvalError::ScanIndex(d.scan_index))?;
            out[k].push(PersonCircle::at(d.x, d.y, NOMINAL_RADIUS).with_score(d.score));
        }
        Ok(out)
    }
}

fn io_err(path: &Path, source: std::io::Error) -> EvalError {
    EvalError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn format_err(path: &Path, message: impl ToString) -> EvalError {
    EvalError::Format {
        path: path.to_path_buf(),
        message: message.to_string(),
    }
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<(), EvalError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| format_err(path, e))?;
    std::fs::write(path, text).map_err(|e| io_err(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, EvalError> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    serde_json::from_str(&text).map_err(|e| format_err(path, e))
}

fn check_header(path: &Path, format: &str, version: u32, want_format: &str, want_version: u32) -> Result<(), EvalError> {
    if format != want_format {
        return Err(format_err(path, format!("not a {want_format} file (format `{format}`)")));
    }
    if version != want_version {
        return Err(format_err(path, format!("unsupported version {version}")));
    }
    Ok(())
}

pub fn write_detections(file: &DetectionFile, path: impl AsRef<Path>) -> Result<(), EvalError> {
    write_json(file, path.as_ref())
}

pub fn read_detections(path: impl AsRef<Path>) -> Result<DetectionFile, EvalError> {
    let path = path.as_ref();
    let file: DetectionFile = read_json(path)?;
    check_header(path, &file.format, file.version, DETECTIONS_FORMAT, DETECTIONS_VERSION)?;
    Ok(file)
}

pub fn write_report(report: &Report, path: impl AsRef<Path>) -> Result<(), EvalError> {
    write_json(report, path.as_ref())
}

pub fn read_report(path: impl AsRef<Path>) -> Result<Report, EvalError> {
    let path = path.as_ref();
    let report: Report = read_json(path)?;
    check_header(path, &report.format, report.version, REPORT_FORMAT, REPORT_VERSION)?;
    Ok(report)
}

/// `association_distance,threshold,precision,recall,tp,fp` rows.
pub fn render_curve_csv(report: &Report) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["association_distance", "threshold", "precision", "recall", "tp", "fp"])
        .expect("in-memory write");
    for r in &report.results {
        for p in &r.curve.points {
            w.serialize((r.association_distance, p.threshold, p.precision, p.recall, p.tp, p.fp))
                .expect("in-memory write");
        }
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv is utf-8")
}

pub fn write_curve_csv(report: &Report, path: impl AsRef<Path>) -> Result<(), EvalError> {
    let path = path.as_ref();
    std::fs::write(path, render_curve_csv(report)).map_err(|e| io_err(path, e))
}
