//! Classical post-processing of the segmentation output: threshold runs,
//! robust per-run centroids, and merging of nearby runs (legs) into people.

use super::{member_points, LfeError, SegModel};
use crate::detector::{Detector, DetectorError};
use crate::geometry::{LaserScan, PersonCircle, Point2D};
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Radius given to every detection; evaluation only looks at centers.
pub const NOMINAL_RADIUS: f64 = 0.3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PeakParams {
    pub height_threshold: f64,
    pub min_region_points: usize,
    pub outlier_mad_k: f64,
    pub leg_merge_distance: f64,
}

impl Default for PeakParams {
    fn default() -> Self {
        Self {
            height_threshold: 0.5,
            min_region_points: 2,
            outlier_mad_k: 3.0,
            leg_merge_distance: 0.6,
        }
    }
}

/// Inclusive index interval of a supra-threshold run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Region {
    pub start: usize,
    pub end: usize,
    pub peak: f64,
    pub width: usize,
}

pub fn find_regions(probs: &[f64], params: &PeakParams) -> Vec<Region> {
    let mut out = Vec::new();
    let mut i = 0;
    while i < probs.len() {
        if probs[i] < params.height_threshold {
            i += 1;
            continue;
        }
        let start = i;
        let mut peak = probs[i];
        while i < probs.len() && probs[i] >= params.height_threshold {
            peak = peak.max(probs[i]);
            i += 1;
        }
        let width = i - start;
        if width >= params.min_region_points.max(1) {
            out.push(Region {
                start,
                end: i - 1,
                peak,
                width,
            });
        }
    }
    out
}

/// A detection with the beams that support it.
#[derive(Debug, Clone, PartialEq)]
pub struct PeakDetection {
    pub circle: PersonCircle,
    pub members: Vec<usize>,
}

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

struct Cluster {
    pos: Point2D,
    mass: f64,
    members: Vec<usize>,
}

/// Member points of one region after outlier removal: distances to the
/// medoid above `k` times their median are dropped.
fn robust_members(points: &[(usize, Point2D)], k: f64) -> Vec<(usize, Point2D)> {
    let medoid = (0..points.len())
        .map(|i| {
            let cost: f64 = points.iter().map(|(_, q)| points[i].1.distance(q)).sum();
            (i, cost)
        })
        .fold((0, f64::INFINITY), |best, cur| if cur.1 < best.1 { cur } else { best })
        .0;
    let m = points[medoid].1;
    let mut d: Vec<f64> = points.iter().map(|(_, p)| p.distance(&m)).collect();
    let dist = d.clone();
    d.sort_by(f64::total_cmp);
    let cutoff = k * median(&d);
    points
        .iter()
        .zip(&dist)
        .filter(|(_, &di)| di <= cutoff)
        .map(|(p, _)| *p)
        .collect()
}

pub fn peak_detections(regions: &[Region], scan: &LaserScan, probs: &[f64], params: &PeakParams) -> Vec<PeakDetection> {
    let mut clusters: Vec<Cluster> = Vec::new();
    for r in regions {
        let points = member_points(scan, r.start..=r.end);
        if points.is_empty() {
            continue;
        }
        let kept = robust_members(&points, params.outlier_mad_k);
        let n = kept.len() as f64;
        let pos = Point2D::new(
            kept.iter().map(|(_, p)| p.x).sum::<f64>() / n,
            kept.iter().map(|(_, p)| p.y).sum::<f64>() / n,
        );
        clusters.push(Cluster {
            pos,
            mass: kept.iter().map(|(i, _)| probs[*i]).sum(),
            members: kept.iter().map(|(i, _)| *i).collect(),
        });
    }

    loop {
        let mut best: Option<(usize, usize, f64)> = None;
        for i in 0..clusters.len() {
            for j in i + 1..clusters.len() {
                let d = clusters[i].pos.distance(&clusters[j].pos);
                if d < params.leg_merge_distance && best.is_none_or(|b| d < b.2) {
                    best = Some((i, j, d));
                }
            }
        }
        let Some((i, j, _)) = best else { break };
        let b = clusters.remove(j);
        let a = &mut clusters[i];
        let total = a.mass + b.mass;
        a.pos = Point2D::new(
            (a.mass * a.pos.x + b.mass * b.pos.x) / total,
            (a.mass * a.pos.y + b.mass * b.pos.y) / total,
        );
        a.mass = total;
        a.members.extend(b.members);
    }

    clusters
        .into_iter()
        .map(|c| {
            let score = c.members.iter().map(|&i| probs[i]).sum::<f64>() / c.members.len() as f64;
            PeakDetection {
                circle: PersonCircle::at(c.pos.x, c.pos.y, NOMINAL_RADIUS).with_score(score),
                members: c.members,
            }
        })
        .collect()
}

pub fn regions_to_detections(regions: &[Region], scan: &LaserScan, probs: &[f64], params: &PeakParams) -> Vec<PersonCircle> {
    peak_detections(regions, scan, probs, params)
        .into_iter()
        .map(|d| d.circle)
        .collect()
}

/// Segmentation network followed by peak post-processing.
#[derive(Debug, Clone)]
pub struct LfePeaksDetector {
    pub model: SegModel,
    pub params: PeakParams,
}

impl LfePeaksDetector {
    pub fn new(model: SegModel, params: PeakParams) -> Self {
        Self { model, params }
    }

    pub fn load(path: impl AsRef<Path>, params: PeakParams) -> Result<Self, LfeError> {
        Ok(Self::new(SegModel::load(path)?, params))
    }
}

impl Detector for LfePeaksDetector {
    fn name(&self) -> &'static str {
        "lfe-peaks"
    }

    fn detect(&self, scan: &LaserScan) -> Result<Vec<PersonCircle>, DetectorError> {
        let probs = self.model.predict_scan(scan)?;
        let regions = find_regions(&probs, &self.params);
        Ok(regions_to_detections(&regions, scan, &probs, &self.params))
    }
}
