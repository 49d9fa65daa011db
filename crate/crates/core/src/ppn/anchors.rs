//! Polar anchor grid and the target encoding used by the proposal head.
//!
//! Sector `s` covers beams `6s..6s+6`; its center bearing is the midpoint
//! of those beams. Level `m` sits at `near + (m + 0.5) * spacing` with
//! `spacing = (far - near) / M`. Anchors are indexed `m * sectors + s`,
//! matching the `(levels, sectors)` layout of the head output.

use crate::geometry::{wrap_angle, PersonCircle, Point2D, SensorMeta};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Beams per sector, the total downsampling of the backbone.
pub const SECTOR_BEAMS: usize = 6;

#[derive(Debug, Error, PartialEq)]
pub enum AnchorError {
    #[error("{0} beams do not split into sectors of 6")]
    Length(usize),
    #[error("need far > near > 0, got near {near}, far {far}")]
    Range { near: f64, far: f64 },
    #[error("need at least 2 anchors per sector, got {0}")]
    Levels(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnchorConfig {
    pub anchors_per_sector: usize,
    pub near: f64,
    pub far: f64,
    /// Positive-assignment distance.
    pub tau: f64,
}

impl Default for AnchorConfig {
    fn default() -> Self {
        Self {
            anchors_per_sector: 16,
            near: 0.3,
            far: 10.0,
            tau: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnchorGrid {
    pub sectors: usize,
    pub levels: usize,
    pub near: f64,
    pub far: f64,
    pub spacing: f64,
    angle_min: f64,
    angle_increment: f64,
}

pub fn build_anchor_grid(meta: &SensorMeta, levels: usize, near: f64, far: f64) -> Result<AnchorGrid, AnchorError> {
    if meta.num_points == 0 || !meta.num_points.is_multiple_of(SECTOR_BEAMS) {
        return Err(AnchorError::Length(meta.num_points));
    }
    if !(near > 0.0 && far > near && far.is_finite()) {
        return Err(AnchorError::Range { near, far });
    }
    if levels < 2 {
        return Err(AnchorError::Levels(levels));
    }
    Ok(AnchorGrid {
        sectors: meta.num_points / SECTOR_BEAMS,
        levels,
        near,
        far,
        spacing: (far - near) / levels as f64,
        angle_min: meta.angle_min,
        angle_increment: meta.angle_increment,
    })
}

impl AnchorGrid {
    pub fn from_config(meta: &SensorMeta, c: &AnchorConfig) -> Result<Self, AnchorError> {
        build_anchor_grid(meta, c.anchors_per_sector, c.near, c.far)
    }

    pub fn len(&self) -> usize {
        self.sectors * self.levels
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index(&self, sector: usize, level: usize) -> usize {
        level * self.sectors + sector
    }

    /// `(sector, level)` of a flat anchor index.
    pub fn position(&self, index: usize) -> (usize, usize) {
        (index % self.sectors, index / self.sectors)
    }

    pub fn sector_width(&self) -> f64 {
        SECTOR_BEAMS as f64 * self.angle_increment
    }

    pub fn sector_angle(&self, sector: usize) -> f64 {
        self.angle_min + (SECTOR_BEAMS as f64 * sector as f64 + 0.5 * (SECTOR_BEAMS - 1) as f64) * self.angle_increment
    }

    pub fn level_range(&self, level: usize) -> f64 {
        self.near + (level as f64 + 0.5) * self.spacing
    }

    pub fn anchor(&self, index: usize) -> Point2D {
        let (s, m) = self.position(index);
        Point2D::from_polar(self.level_range(m), self.sector_angle(s))
    }

    /// Polar offsets of `target` relative to anchor `index`, normalized by
    /// the level spacing: `(dd, dl)`.
    pub fn encode(&self, index: usize, target: &Point2D) -> (f64, f64) {
        let (s, m) = self.position(index);
        let ra = self.level_range(m);
        let ta = self.sector_angle(s);
        let dd = (target.norm() - ra) / self.spacing;
        let dl = wrap_angle(target.bearing() - ta) * ra / self.spacing;
        (dd, dl)
    }

    /// Inverse of [`encode`](Self::encode); `None` when the decoded range is
    /// not positive.
    pub fn decode(&self, index: usize, dd: f64, dl: f64) -> Option<Point2D> {
        let (s, m) = self.position(index);
        let ra = self.level_range(m);
        let r = ra + dd * self.spacing;
        if !(r > 0.0) {
            return None;
        }
        let theta = self.sector_angle(s) + dl * self.spacing / ra;
        Some(Point2D::from_polar(r, theta))
    }
}

/// Per-anchor training targets in `m * sectors + s` order.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorTargets {
    pub labels: Vec<f64>,
    pub dd: Vec<f64>,
    pub dl: Vec<f64>,
    /// Ground-truth index each positive anchor regresses to.
    pub assigned: Vec<Option<usize>>,
    pub n_pos: usize,
    pub n_neg: usize,
}

impl AnchorTargets {
    pub fn is_positive(&self, index: usize) -> bool {
        self.assigned[index].is_some()
    }
}

/// An anchor is positive iff its nearest ground truth (ties: lower index)
/// lies within `tau`; positives regress towards that ground truth.
pub fn assign_targets(grid: &AnchorGrid, gt: &[PersonCircle], tau: f64) -> AnchorTargets {
    let n = grid.len();
    let mut t = AnchorTargets {
        labels: vec![0.0; n],
        dd: vec![0.0; n],
        dl: vec![0.0; n],
        assigned: vec![None; n],
        n_pos: 0,
        n_neg: 0,
    };
    let centers: Vec<Point2D> = gt.iter().map(PersonCircle::center).collect();
    for a in 0..n {
        let p = grid.anchor(a);
        let nearest = centers
            .iter()
            .enumerate()
            .map(|(k, c)| (k, p.distance(c)))
            .fold(None, |best: Option<(usize, f64)>, cur| match best {
                Some(b) if b.1 <= cur.1 => Some(b),
                _ => Some(cur),
            });
        match nearest {
            Some((k, d)) if d <= tau => {
                let (dd, dl) = grid.encode(a, &centers[k]);
                t.labels[a] = 1.0;
                t.dd[a] = dd;
                t.dl[a] = dl;
                t.assigned[a] = Some(k);
                t.n_pos += 1;
            }
            _ => t.n_neg += 1,
        }
    }
    t
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn frog_grid() -> AnchorGrid {
        AnchorGrid::from_config(&SensorMeta::frog(), &AnchorConfig::default()).unwrap()
    }

    #[test]
    fn frog_preset_sectors() {
        let g = frog_grid();
        assert_eq!(g.sectors, 120);
        assert!((g.sector_width().to_degrees() - 1.5).abs() < 1e-12);
        assert!((g.spacing - 0.60625).abs() < 1e-15);
        // sector centers are the mean bearing of their six beams
        let meta = SensorMeta::frog();
        let mean: f64 = (0..6).map(|i| meta.angle_of(6 * 7 + i)).sum::<f64>() / 6.0;
        assert!((g.sector_angle(7) - mean).abs() < 1e-12);
    }

    #[test]
    fn two_levels_sit_at_quarter_points() {
        let g = build_anchor_grid(&SensorMeta::frog(), 2, 1.0, 5.0).unwrap();
        assert_eq!(g.level_range(0), 1.0 + 0.25 * 4.0);
        assert_eq!(g.level_range(1), 1.0 + 0.75 * 4.0);
    }

    #[test]
    fn invalid_geometry() {
        let meta = SensorMeta::frog();
        assert!(matches!(build_anchor_grid(&meta, 16, 0.0, 10.0), Err(AnchorError::Range { .. })));
        assert!(matches!(build_anchor_grid(&meta, 16, 3.0, 2.0), Err(AnchorError::Range { .. })));
        assert_eq!(build_anchor_grid(&meta, 1, 0.3, 10.0), Err(AnchorError::Levels(1)));
        assert_eq!(build_anchor_grid(&SensorMeta::half_fan(452), 16, 0.3, 10.0), Err(AnchorError::Length(452)));
    }

    #[test]
    fn arc_gap_grows_linearly_with_range() {
        let g = frog_grid();
        let gap = |m: usize| g.anchor(g.index(10, m)).distance(&g.anchor(g.index(11, m)));
        let ratio = gap(1) / g.level_range(1);
        for m in 0..g.levels {
            assert!((gap(m) / g.level_range(m) - ratio).abs() < 1e-12);
        }
    }

    #[test]
    fn gt_on_an_anchor() {
        let g = frog_grid();
        let a = g.index(60, 5);
        let p = g.anchor(a);
        let t = assign_targets(&g, &[PersonCircle::at(p.x, p.y, 0.3)], 0.5);
        assert_eq!(t.labels[a], 1.0);
        assert!(t.dd[a].abs() < 1e-12 && t.dl[a].abs() < 1e-12);
        assert_eq!(t.n_pos + t.n_neg, g.len());
    }

    #[test]
    fn one_spacing_further_out_is_unit_offset() {
        let g = frog_grid();
        let a = g.index(30, 3);
        let theta = g.sector_angle(30);
        let r = g.level_range(3) + g.spacing;
        let gt = PersonCircle::from_polar(r, theta, 0.3);
        // the point is a full spacing away, so tau must exceed it
        let t = assign_targets(&g, &[gt], 1.0);
        assert_eq!(t.labels[a], 1.0);
        assert!((t.dd[a] - 1.0).abs() < 1e-12);
        assert!(t.dl[a].abs() < 1e-12);
    }

    #[test]
    fn decode_examples() {
        let g = frog_grid();
        let a = g.index(17, 4);
        let p = g.decode(a, 0.0, 0.0).unwrap();
        assert!(p.distance(&g.anchor(a)) < 1e-12);

        // an anchor at bearing 0 and range 2
        let meta = SensorMeta {
            num_points: 6,
            angle_min: -2.5 * 0.01,
            angle_increment: 0.01,
            range_max: 10.0,
            frequency: 40.0,
        };
        let g = build_anchor_grid(&meta, 16, 2.0 - 0.5 * 0.60625, 2.0 - 0.5 * 0.60625 + 16.0 * 0.60625).unwrap();
        assert!((g.level_range(0) - 2.0).abs() < 1e-12);
        assert!(g.sector_angle(0).abs() < 1e-15);
        let p = g.decode(0, 1.0, 0.0).unwrap();
        assert!((p.norm() - 2.60625).abs() < 1e-12);
        assert!(p.bearing().abs() < 1e-15);
        assert!(g.decode(0, -10.0, 0.0).is_none());
    }

    proptest! {
        #[test]
        fn encode_decode_round_trip(s in 0usize..120, m in 0usize..16, r in 0.3f64..10.0, th in -1.57f64..1.57) {
            let g = frog_grid();
            let a = g.index(s, m);
            let target = Point2D::from_polar(r, th);
            let (dd, dl) = g.encode(a, &target);
            let back = g.decode(a, dd, dl).unwrap();
            prop_assert!(back.distance(&target) < 1e-9);
        }
    }
}
