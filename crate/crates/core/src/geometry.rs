//! Coordinate conventions and the scan/circle value types shared by every
//! other module.
//!
//! The sensor frame follows the usual robotics convention: X points forward,
//! Y points left and angles grow counterclockwise. Beam `i` of a scan lies at
//! `angle_min + i * angle_increment`, so index 0 is the rightmost beam.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use thiserror::Error;

/// Range value used on disk for beams without a return.
pub const INVALID_RANGE_SENTINEL: f32 = 60.0;

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("invalid sensor metadata: {0}")]
    InvalidMeta(String),
    #[error("scan has {got} ranges, sensor expects {expected}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("range {value} at beam {index} is negative or NaN")]
    InvalidRange { index: usize, value: f64 },
    #[error("circle radius must be positive, got {0}")]
    NonPositiveRadius(f64),
    #[error("circle center coincides with the sensor origin")]
    CenterAtOrigin,
    #[error("circle of radius {radius} at distance {distance} contains the sensor origin")]
    ContainsOrigin { radius: f64, distance: f64 },
}

/// Angular layout and limits of a planar range finder.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensorMeta {
    pub num_points: usize,
    pub angle_min: f64,
    pub angle_increment: f64,
    pub range_max: f64,
    pub frequency: f64,
}

impl SensorMeta {
    /// 720 beams over 180 degrees at 0.25 degree steps, 10 m evaluation
    /// range, 40 Hz. Beam 0 sits at -90 degrees, the last at +89.75.
    pub fn frog() -> Self {
        Self {
            num_points: 720,
            angle_min: -PI / 2.0,
            angle_increment: 0.25_f64.to_radians(),
            range_max: 10.0,
            frequency: 40.0,
        }
    }

    /// A 180 degree fan with `num_points` beams and the same limits as the
    /// FROG preset.
    pub fn half_fan(num_points: usize) -> Self {
        Self {
            num_points,
            angle_min: -PI / 2.0,
            angle_increment: PI / num_points as f64,
            ..Self::frog()
        }
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        if self.num_points < 2 {
            return Err(GeometryError::InvalidMeta(format!(
                "num_points must be >= 2, got {}",
                self.num_points
            )));
        }
        if !(self.angle_increment > 0.0) || !self.angle_increment.is_finite() {
            return Err(GeometryError::InvalidMeta(format!(
                "angle_increment must be positive, got {}",
                self.angle_increment
            )));
        }
        if !self.angle_min.is_finite() {
            return Err(GeometryError::InvalidMeta("angle_min is not finite".into()));
        }
        if self.field_of_view() > 2.0 * PI + 1e-12 {
            return Err(GeometryError::InvalidMeta(format!(
                "field of view {} exceeds a full turn",
                self.field_of_view()
            )));
        }
        if !(self.range_max > 0.0) || !(self.frequency > 0.0) {
            return Err(GeometryError::InvalidMeta(
                "range_max and frequency must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Angle spanned from the first to the last beam.
    pub fn field_of_view(&self) -> f64 {
        (self.num_points - 1) as f64 * self.angle_increment
    }

    #[inline]
    pub fn angle_of(&self, index: usize) -> f64 {
        self.angle_min + index as f64 * self.angle_increment
    }

    pub fn angle_max(&self) -> f64 {
        self.angle_of(self.num_points - 1)
    }

    pub fn period(&self) -> f64 {
        1.0 / self.frequency
    }
}

impl Default for SensorMeta {
    fn default() -> Self {
        Self::frog()
    }
}

/// One sweep of the sensor. Beams without a return hold `f64::INFINITY`.
#[derive(Debug, Clone, PartialEq)]
pub struct LaserScan {
    pub ranges: Vec<f64>,
    pub timestamp: f64,
    pub meta: SensorMeta,
}

impl LaserScan {
    pub fn new(ranges: Vec<f64>, timestamp: f64, meta: SensorMeta) -> Result<Self, GeometryError> {
        meta.validate()?;
        if ranges.len() != meta.num_points {
            return Err(GeometryError::LengthMismatch {
                expected: meta.num_points,
                got: ranges.len(),
            });
        }
        if let Some((index, &value)) = ranges
            .iter()
            .enumerate()
            .find(|(_, r)| r.is_nan() || **r < 0.0)
        {
            return Err(GeometryError::InvalidRange { index, value });
        }
        Ok(Self {
            ranges,
            timestamp,
            meta,
        })
    }

    pub fn len(&self) -> usize {
        self.ranges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ranges.is_empty()
    }

    /// A beam is usable if it returned a finite range within `range_max`.
    #[inline]
    pub fn is_valid_beam(&self, index: usize) -> bool {
        let r = self.ranges[index];
        r.is_finite() && r <= self.meta.range_max
    }

    pub fn point(&self, index: usize) -> Option<Point2D> {
        self.is_valid_beam(index)
            .then(|| Point2D::from_polar(self.ranges[index], self.meta.angle_of(index)))
    }

    /// `(beam index, point)` for every valid beam.
    pub fn valid_points(&self) -> Vec<(usize, Point2D)> {
        (0..self.len())
            .filter_map(|i| self.point(i).map(|p| (i, p)))
            .collect()
    }

    /// Ranges scaled to `[0, 1]` by `range_max`; invalid and out-of-range
    /// beams map to 1.0. This is the network input contract.
    pub fn normalized(&self) -> Vec<f64> {
        self.ranges
            .iter()
            .map(|&r| {
                if r.is_finite() {
                    (r / self.meta.range_max).clamp(0.0, 1.0)
                } else {
                    1.0
                }
            })
            .collect()
    }
}

/// Projects every beam to the sensor plane. Invalid beams come back as `None`.
pub fn polar_to_cartesian(scan: &LaserScan) -> Vec<Option<Point2D>> {
    (0..scan.len()).map(|i| scan.point(i)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point2D {
    pub x: f64,
    pub y: f64,
}

impl Point2D {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    #[inline]
    pub fn from_polar(range: f64, angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Self {
            x: range * c,
            y: range * s,
        }
    }

    #[inline]
    pub fn distance(&self, other: &Point2D) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    #[inline]
    pub fn norm(&self) -> f64 {
        self.x.hypot(self.y)
    }

    #[inline]
    pub fn bearing(&self) -> f64 {
        self.y.atan2(self.x)
    }
}

/// A person as a circle in the sensor plane. Ground truth and detections
/// share this type; detections carry a score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PersonCircle {
    pub x: f64,
    pub y: f64,
    pub radius: f64,
    pub angle: f64,
    pub distance: f64,
    pub half_angle: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub person_id: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
}

/// Strict constructor: the circle must not contain the sensor origin.
pub fn circle_from_center(x: f64, y: f64, radius: f64) -> Result<PersonCircle, GeometryError> {
    if !(radius > 0.0) {
        return Err(GeometryError::NonPositiveRadius(radius));
    }
    let distance = x.hypot(y);
    if distance == 0.0 {
        return Err(GeometryError::CenterAtOrigin);
    }
    if radius >= distance {
        return Err(GeometryError::ContainsOrigin { radius, distance });
    }
    Ok(PersonCircle::at(x, y, radius))
}

/// Euclidean distance between circle centers.
#[inline]
pub fn center_distance(a: &PersonCircle, b: &PersonCircle) -> f64 {
    (a.x - b.x).hypot(a.y - b.y)
}

impl PersonCircle {
    /// Lenient constructor used for detections, which may sit closer to the
    /// sensor than their nominal radius. In that case the projected cone
    /// covers everything and `half_angle` is set to pi.
    pub fn at(x: f64, y: f64, radius: f64) -> Self {
        let distance = x.hypot(y);
        let half_angle = if radius > 0.0 && radius < distance {
            (radius / distance).asin()
        } else {
            PI
        };
        Self {
            x,
            y,
            radius,
            angle: y.atan2(x),
            distance,
            half_angle,
            person_id: None,
            score: None,
        }
    }

    pub fn from_polar(distance: f64, angle: f64, radius: f64) -> Self {
        let p = Point2D::from_polar(distance, angle);
        Self::at(p.x, p.y, radius)
    }

    pub fn with_score(mut self, score: f64) -> Self {
        self.score = Some(score);
        self
    }

    pub fn with_id(mut self, id: u32) -> Self {
        self.person_id = Some(id);
        self
    }

    pub fn center(&self) -> Point2D {
        Point2D::new(self.x, self.y)
    }

    /// Score for ranking; ground truth without a score counts as 1.0.
    pub fn confidence(&self) -> f64 {
        self.score.unwrap_or(1.0)
    }

    #[inline]
    pub fn contains(&self, p: &Point2D) -> bool {
        (p.x - self.x).hypot(p.y - self.y) <= self.radius
    }

    /// The six on-disk fields in column order.
    pub fn to_row(&self) -> [f32; 6] {
        [
            self.x as f32,
            self.y as f32,
            self.radius as f32,
            self.angle as f32,
            self.distance as f32,
            self.half_angle as f32,
        ]
    }

    pub fn from_row(row: &[f32; 6]) -> Self {
        Self {
            x: row[0] as f64,
            y: row[1] as f64,
            radius: row[2] as f64,
            angle: row[3] as f64,
            distance: row[4] as f64,
            half_angle: row[5] as f64,
            person_id: None,
            score: None,
        }
    }
}

/// Wraps an angle to `(-pi, pi]`.
#[inline]
pub fn wrap_angle(a: f64) -> f64 {
    let mut w = a.rem_euclid(2.0 * PI);
    if w > PI {
        w -= 2.0 * PI;
    }
    w
}
