//! In-memory form of the scan dataset layout, its validation rules, and
//! per-scan access.
//!
//! Arrays mirror the on-disk layout exactly: `scans` is row-major `N x P`
//! float32, `circles` holds `M` rows of `(x, y, radius, angle, distance,
//! half_angle)`, and scan `i` owns the `circle_num[i]` rows starting at
//! `circle_idx[i]`. Rows are stored sequentially in scan order; the loader
//! enforces that layout.

mod export;
mod hdf5io;
mod odometry;

pub use export::{
    export_annotations, import_annotations, parse_annotations, render_annotations,
    AnnotationDocument, AnnotationRecord, ExportFormat, FramePointClasses,
    ANNOTATION_SCHEMA_VERSION,
};
pub use hdf5io::{load_dataset, save_dataset};
pub use odometry::{interpolate_odometry, load_odometry_csv, save_odometry_csv, OdometrySeries};

use crate::geometry::{GeometryError, LaserScan, PersonCircle, SensorMeta, INVALID_RANGE_SENTINEL};
use std::path::PathBuf;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("HDF5 error: {0}")]
    Hdf5(#[from] hdf5::Error),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("{path}: missing dataset `{name}`")]
    MissingArray { path: PathBuf, name: &'static str },
    #[error("array `{name}` has shape {got:?}, expected {expected}")]
    Shape {
        name: &'static str,
        got: Vec<usize>,
        expected: String,
    },
    #[error("array `{name}` violates its invariant at index {index}: {reason}")]
    Invariant {
        name: &'static str,
        index: usize,
        reason: String,
    },
    #[error("scan index {index} out of bounds for {len} scans")]
    IndexOutOfBounds { index: usize, len: usize },
    #[error("dataset has no train/validation split")]
    NoSplit,
    #[error("time {t} outside odometry span [{start}, {end}]")]
    OutsideSpan { t: f64, start: f64, end: f64 },
    #[error("malformed export document: {0}")]
    Format(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Split label for training scans.
pub const SPLIT_TRAIN: u8 = 0;
/// Split label for validation scans.
pub const SPLIT_VAL: u8 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub meta: SensorMeta,
    /// `N x num_points` ranges; beams without return are `+inf` in memory.
    pub scans: Vec<f32>,
    pub timestamps: Vec<f64>,
    pub circles: Vec<[f32; 6]>,
    pub circle_idx: Vec<u32>,
    pub circle_num: Vec<u32>,
    pub split: Option<Vec<u8>>,
}

/// One scan with its annotations, the unit used to assemble datasets.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub ranges: Vec<f64>,
    pub timestamp: f64,
    pub circles: Vec<PersonCircle>,
}

impl Dataset {
    pub fn empty(meta: SensorMeta) -> Self {
        Self {
            meta,
            scans: Vec::new(),
            timestamps: Vec::new(),
            circles: Vec::new(),
            circle_idx: Vec::new(),
            circle_num: Vec::new(),
            split: None,
        }
    }

    pub fn from_frames<I>(meta: SensorMeta, frames: I) -> Result<Self, DatasetError>
    where
        I: IntoIterator<Item = Frame>,
    {
        let mut ds = Self::empty(meta);
        for frame in frames {
            ds.push_frame(&frame)?;
        }
        Ok(ds)
    }

    pub fn push_frame(&mut self, frame: &Frame) -> Result<(), DatasetError> {
        if frame.ranges.len() != self.meta.num_points {
            return Err(DatasetError::Shape {
                name: "scans",
                got: vec![frame.ranges.len()],
                expected: format!("row of {}", self.meta.num_points),
            });
        }
        self.circle_idx.push(self.circles.len() as u32);
        self.circle_num.push(frame.circles.len() as u32);
        self.circles.extend(frame.circles.iter().map(PersonCircle::to_row));
        self.scans.extend(frame.ranges.iter().map(|&r| {
            let r = r as f32;
            if r >= INVALID_RANGE_SENTINEL {
                f32::INFINITY
            } else {
                r
            }
        }));
        self.timestamps.push(frame.timestamp);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    pub fn ranges(&self, i: usize) -> &[f32] {
        let p = self.meta.num_points;
        &self.scans[i * p..(i + 1) * p]
    }

    pub fn scan(&self, i: usize) -> Result<LaserScan, DatasetError> {
        self.check_index(i)?;
        Ok(LaserScan {
            ranges: self.ranges(i).iter().map(|&r| r as f64).collect(),
            timestamp: self.timestamps[i],
            meta: self.meta,
        })
    }

    pub fn annotations(&self, i: usize) -> Result<Vec<PersonCircle>, DatasetError> {
        self.check_index(i)?;
        let start = self.circle_idx[i] as usize;
        let end = start + self.circle_num[i] as usize;
        Ok(self.circles[start..end]
            .iter()
            .map(PersonCircle::from_row)
            .collect())
    }

    fn check_index(&self, i: usize) -> Result<(), DatasetError> {
        if i >= self.len() {
            return Err(DatasetError::IndexOutOfBounds {
                index: i,
                len: self.len(),
            });
        }
        Ok(())
    }

    /// Checks every layout invariant; the first violation is reported with
    /// the offending array and index.
    pub fn validate(&self) -> Result<(), DatasetError> {
        self.meta.validate()?;
        let n = self.len();
        let p = self.meta.num_points;
        if self.scans.len() != n * p {
            return Err(DatasetError::Shape {
                name: "scans",
                got: vec![self.scans.len() / p.max(1), p],
                expected: format!("({n}, {p})"),
            });
        }
        for (name, len) in [
            ("circle_idx", self.circle_idx.len()),
            ("circle_num", self.circle_num.len()),
        ] {
            if len != n {
                return Err(DatasetError::Shape {
                    name,
                    got: vec![len],
                    expected: format!("({n})"),
                });
            }
        }
        if let Some(index) = self.scans.iter().position(|r| r.is_nan() || *r < 0.0) {
            return Err(DatasetError::Invariant {
                name: "scans",
                index: index / p,
                reason: format!("range {} at beam {}", self.scans[index], index % p),
            });
        }
        if let Some(index) = self.timestamps.iter().position(|t| !t.is_finite()) {
            return Err(DatasetError::Invariant {
                name: "timestamps",
                index,
                reason: "timestamp is not finite".into(),
            });
        }
        let mut expected_idx: u64 = 0;
        for i in 0..n {
            if self.circle_idx[i] as u64 != expected_idx {
                return Err(DatasetError::Invariant {
                    name: "circle_idx",
                    index: i,
                    reason: format!(
                        "annotations not sequential: expected {expected_idx}, found {}",
                        self.circle_idx[i]
                    ),
                });
            }
            expected_idx += self.circle_num[i] as u64;
            if expected_idx > self.circles.len() as u64 {
                return Err(DatasetError::Invariant {
                    name: "circle_num",
                    index: i,
                    reason: format!(
                        "circle_idx + circle_num = {expected_idx} exceeds {} circles",
                        self.circles.len()
                    ),
                });
            }
        }
        if expected_idx != self.circles.len() as u64 {
            return Err(DatasetError::Invariant {
                name: "circles",
                index: expected_idx as usize,
                reason: "rows not referenced by any scan".into(),
            });
        }
        for (index, row) in self.circles.iter().enumerate() {
            if let Err(reason) = check_circle_row(row) {
                return Err(DatasetError::Invariant {
                    name: "circles",
                    index,
                    reason,
                });
            }
        }
        if let Some(split) = &self.split {
            if split.len() != n {
                return Err(DatasetError::Shape {
                    name: "split",
                    got: vec![split.len()],
                    expected: format!("({n})"),
                });
            }
            if let Some(index) = split.iter().position(|&s| s > SPLIT_VAL) {
                return Err(DatasetError::Invariant {
                    name: "split",
                    index,
                    reason: format!("value {} not in {{0, 1}}", split[index]),
                });
            }
        }
        Ok(())
    }
}

/// Geometric consistency of one stored circle row, at float32 precision.
fn check_circle_row(row: &[f32; 6]) -> Result<(), String> {
    if row.iter().any(|v| !v.is_finite()) {
        return Err("non-finite field".into());
    }
    let [x, y, radius, angle, distance, half_angle] = row.map(|v| v as f64);
    if radius <= 0.0 {
        return Err(format!("radius {radius} is not positive"));
    }
    let tol = 1e-4 * distance.max(1.0);
    if (distance - x.hypot(y)).abs() > tol {
        return Err(format!("distance {distance} != hypot(x, y)"));
    }
    if distance > 1e-3 && crate::geometry::wrap_angle(angle - y.atan2(x)).abs() > 1e-4 {
        return Err(format!("angle {angle} != atan2(y, x)"));
    }
    if radius < distance && (half_angle - (radius / distance).asin()).abs() > 1e-4 {
        return Err(format!("half_angle {half_angle} != asin(radius / distance)"));
    }
    Ok(())
}

/// Scan `i` together with its annotations.
pub fn scan_with_annotations(
    ds: &Dataset,
    i: usize,
) -> Result<(LaserScan, Vec<PersonCircle>), DatasetError> {
    Ok((ds.scan(i)?, ds.annotations(i)?))
}

/// Training and validation scan indices. Scans without annotations are
/// excluded from both views.
pub fn benchmark_views(ds: &Dataset) -> Result<(Vec<usize>, Vec<usize>), DatasetError> {
    let split = ds.split.as_ref().ok_or(DatasetError::NoSplit)?;
    let mut train = Vec::new();
    let mut val = Vec::new();
    for (i, &s) in split.iter().enumerate() {
        if ds.circle_num[i] == 0 {
            continue;
        }
        if s == SPLIT_VAL {
            val.push(i);
        } else {
            train.push(i);
        }
    }
    Ok((train, val))
}

/// All annotated scans, for datasets without a split (test sequences).
pub fn annotated_indices(ds: &Dataset) -> Vec<usize> {
    (0..ds.len()).filter(|&i| ds.circle_num[i] > 0).collect()
}
