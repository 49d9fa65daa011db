//! Robot odometry samples and their interpolation at scan timestamps.
//!
//! On disk the series is a CSV file with header `ts,x,y,zrot`, one sample
//! per row, timestamps strictly increasing. Values are relative to an
//! arbitrary initial pose; only differences between samples carry meaning.

use super::DatasetError;
use crate::geometry::wrap_angle;
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, PartialEq)]
pub struct OdometrySeries {
    pub ts: Vec<f64>,
    /// `(x, y, z_rotation)` per sample.
    pub data: Vec<[f64; 3]>,
}

#[derive(Serialize, Deserialize)]
struct OdometryRow {
    ts: f64,
    x: f64,
    y: f64,
    zrot: f64,
}

impl OdometrySeries {
    pub fn new(ts: Vec<f64>, data: Vec<[f64; 3]>) -> Result<Self, DatasetError> {
        let series = Self { ts, data };
        series.validate()?;
        Ok(series)
    }

    pub fn validate(&self) -> Result<(), DatasetError> {
        if self.ts.len() != self.data.len() {
            return Err(DatasetError::Shape {
                name: "data",
                got: vec![self.data.len(), 3],
                expected: format!("({}, 3)", self.ts.len()),
            });
        }
        if let Some(index) = self.data.iter().position(|d| d.iter().any(|v| !v.is_finite())) {
            return Err(DatasetError::Invariant {
                name: "data",
                index,
                reason: "non-finite sample".into(),
            });
        }
        for (i, w) in self.ts.windows(2).enumerate() {
            if !(w[1] > w[0]) {
                return Err(DatasetError::Invariant {
                    name: "ts",
                    index: i + 1,
                    reason: format!("timestamps not strictly increasing ({} -> {})", w[0], w[1]),
                });
            }
        }
        Ok(())
    }
}

/// Pose at time `t`: linear in x and y, shortest arc in rotation. The
/// returned rotation lies in `(-pi, pi]`.
pub fn interpolate_odometry(od: &OdometrySeries, t: f64) -> Result<[f64; 3], DatasetError> {
    let (start, end) = match (od.ts.first(), od.ts.last()) {
        (Some(&s), Some(&e)) => (s, e),
        _ => {
            return Err(DatasetError::OutsideSpan {
                t,
                start: f64::NAN,
                end: f64::NAN,
            })
        }
    };
    if !(t >= start && t <= end) {
        return Err(DatasetError::OutsideSpan { t, start, end });
    }
    // first knot with ts >= t
    let j = od.ts.partition_point(|&k| k < t);
    if od.ts[j] == t {
        let d = od.data[j];
        return Ok([d[0], d[1], wrap_angle(d[2])]);
    }
    let (t0, t1) = (od.ts[j - 1], od.ts[j]);
    let (a, b) = (od.data[j - 1], od.data[j]);
    let u = (t - t0) / (t1 - t0);
    let dtheta = wrap_angle(b[2] - a[2]);
    Ok([
        a[0] + u * (b[0] - a[0]),
        a[1] + u * (b[1] - a[1]),
        wrap_angle(a[2] + u * dtheta),
    ])
}

pub fn load_odometry_csv(path: impl AsRef<Path>) -> Result<OdometrySeries, DatasetError> {
    let mut reader = csv::Reader::from_path(path)?;
    let mut ts = Vec::new();
    let mut data = Vec::new();
    for row in reader.deserialize() {
        let row: OdometryRow = row?;
        ts.push(row.ts);
        data.push([row.x, row.y, row.zrot]);
    }
    OdometrySeries::new(ts, data)
}

pub fn save_odometry_csv(od: &OdometrySeries, path: impl AsRef<Path>) -> Result<(), DatasetError> {
    od.validate()?;
    let mut writer = csv::Writer::from_path(path)?;
    for (&ts, d) in od.ts.iter().zip(&od.data) {
        writer.serialize(OdometryRow {
            ts,
            x: d[0],
            y: d[1],
            zrot: d[2],
        })?;
    }
    writer.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    #[test]
    fn exact_at_knots() {
        let od = OdometrySeries::new(vec![0.0, 1.0, 2.0], vec![[0.0, 0.0, 0.0], [1.0, 2.0, 0.5], [3.0, 1.0, -0.5]]).unwrap();
        assert_eq!(interpolate_odometry(&od, 1.0).unwrap(), [1.0, 2.0, 0.5]);
        assert_eq!(interpolate_odometry(&od, 2.0).unwrap(), [3.0, 1.0, -0.5]);
        assert_eq!(interpolate_odometry(&od, 0.0).unwrap(), [0.0, 0.0, 0.0]);
    }

    #[test]
    fn linear_midpoint() {
        let od = OdometrySeries::new(vec![0.0, 1.0], vec![[0.0, 0.0, 0.0], [2.0, 0.0, 0.0]]).unwrap();
        assert_eq!(interpolate_odometry(&od, 0.5).unwrap(), [1.0, 0.0, 0.0]);
    }

    #[test]
    fn rotation_crosses_the_wrap() {
        let od = OdometrySeries::new(vec![0.0, 1.0], vec![[0.0, 0.0, 3.1], [0.0, 0.0, -3.1]]).unwrap();
        let mid = interpolate_odometry(&od, 0.5).unwrap()[2];
        // unwrap oracle: -3.1 + 2 pi is the continuation of 3.1
        let unwrapped_end = -3.1 + 2.0 * PI;
        let oracle = (3.1 + unwrapped_end) / 2.0;
        assert!((oracle - PI).abs() < 1e-12);
        assert!((mid.abs() - PI).abs() < 1e-12, "got {mid}");
    }

    #[test]
    fn outside_span_is_an_error() {
        let od = OdometrySeries::new(vec![1.0, 2.0], vec![[0.0; 3], [1.0, 0.0, 0.0]]).unwrap();
        assert!(matches!(interpolate_odometry(&od, 0.99), Err(DatasetError::OutsideSpan { .. })));
        assert!(matches!(interpolate_odometry(&od, 2.01), Err(DatasetError::OutsideSpan { .. })));
    }

    #[test]
    fn rejects_non_monotone_time() {
        assert!(OdometrySeries::new(vec![0.0, 0.0], vec![[0.0; 3]; 2]).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("odom.csv");
        let od = OdometrySeries::new(vec![0.1, 0.35, 0.6], vec![[0.0, 0.1, 0.2], [1.0 / 3.0, -0.5, 3.0], [2.0, 2.0, -3.0]]).unwrap();
        save_odometry_csv(&od, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("ts,x,y,zrot\n"));
        assert_eq!(load_odometry_csv(&path).unwrap(), od);
    }

    proptest! {
        #[test]
        fn continuous_in_time(
            x0 in -5.0f64..5.0, x1 in -5.0f64..5.0,
            r0 in -3.1f64..3.1, r1 in -3.1f64..3.1,
            t in 0.0f64..1.0,
        ) {
            let od = OdometrySeries::new(vec![0.0, 1.0], vec![[x0, 0.0, r0], [x1, 0.0, r1]]).unwrap();
            let eps = 1e-7;
            let a = interpolate_odometry(&od, t).unwrap();
            let b = interpolate_odometry(&od, (t + eps).min(1.0)).unwrap();
            prop_assert!((a[0] - b[0]).abs() < 1e-5);
            prop_assert!(wrap_angle(a[2] - b[2]).abs() < 1e-5);
        }
    }
}
