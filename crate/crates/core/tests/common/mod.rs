//! Independent reference implementations used by the acceptance suite.
//!
//! Nothing here calls into the code it checks: the matcher, the metric
//! sweep and the suppression reference are written from the definitions.

#![allow(dead_code)]

use legscan::ppn::Proposal;
use legscan::PersonCircle;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use std::io::Write;

/// Prints one verdict line straight to stderr so it survives output capture.
pub fn verdict(name: &str, pass: bool, detail: &str) -> bool {
    let line = format!("{} {name}: {detail}\n", if pass { "PASS" } else { "FAIL" });
    let _ = std::io::stderr().write_all(line.as_bytes());
    pass
}

fn dist(a: &PersonCircle, b: &PersonCircle) -> f64 {
    (a.x - b.x).hypot(a.y - b.y)
}

/// Multi-pass matching: each pass finds, for every unresolved detection, its
/// closest unclaimed person within `d`, and resolves the highest-scoring
/// detection that has one. Ties: earlier detection, then earlier person.
pub fn multipass_match(dets: &[PersonCircle], gts: &[PersonCircle], d: f64) -> Vec<bool> {
    let mut tp = vec![false; dets.len()];
    let mut open_det = vec![true; dets.len()];
    let mut open_gt = vec![true; gts.len()];
    loop {
        let mut pick: Option<(usize, usize)> = None;
        for (i, det) in dets.iter().enumerate() {
            if !open_det[i] {
                continue;
            }
            let mut closest: Option<(usize, f64)> = None;
            for (k, g) in gts.iter().enumerate() {
                let e = dist(det, g);
                if open_gt[k] && e <= d && closest.is_none_or(|(_, b)| e < b) {
                    closest = Some((k, e));
                }
            }
            if let Some((k, _)) = closest {
                let better = match pick {
                    None => true,
                    Some((j, _)) => det.confidence() > dets[j].confidence(),
                };
                if better {
                    pick = Some((i, k));
                }
            }
        }
        match pick {
            Some((i, k)) => {
                tp[i] = true;
                open_det[i] = false;
                open_gt[k] = false;
            }
            None => return tp,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub ap: f64,
    pub peak_f1: f64,
    pub eer: f64,
}

/// Threshold sweep: for every distinct surviving score `t`, re-match only
/// the detections scoring at least `t` and read off one (P, R) pair.
pub fn sweep_metrics(dets: &[Vec<PersonCircle>], gts: &[Vec<PersonCircle>], d: f64) -> Metrics {
    let keep = |c: &PersonCircle| c.x.hypot(c.y) <= 10.0;
    let dets: Vec<Vec<PersonCircle>> = dets
        .iter()
        .map(|s| s.iter().filter(|c| keep(c) && c.confidence() >= 0.01).cloned().collect())
        .collect();
    let gts: Vec<Vec<PersonCircle>> = gts.iter().map(|s| s.iter().filter(|c| keep(c)).cloned().collect()).collect();
    let total: usize = gts.iter().map(Vec::len).sum();
    assert!(total > 0);

    let mut thresholds: Vec<f64> = dets.iter().flatten().map(PersonCircle::confidence).collect();
    thresholds.sort_by(|a, b| b.partial_cmp(a).unwrap());
    thresholds.dedup();

    let mut pr = Vec::new();
    for &t in &thresholds {
        let (mut tp, mut n) = (0usize, 0usize);
        for (sd, sg) in dets.iter().zip(&gts) {
            let above: Vec<PersonCircle> = sd.iter().filter(|c| c.confidence() >= t).cloned().collect();
            tp += multipass_match(&above, sg, d).iter().filter(|&&h| h).count();
            n += above.len();
        }
        pr.push((tp as f64 / n as f64, tp as f64 / total as f64));
    }
    if pr.is_empty() {
        return Metrics {
            ap: 0.0,
            peak_f1: 0.0,
            eer: 0.0,
        };
    }

    let f1 = |p: f64, r: f64| if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
    let ap = (0..=10)
        .map(|k| {
            let level = k as f64 / 10.0;
            pr.iter().filter(|(_, r)| *r >= level).map(|(p, _)| *p).fold(0.0, f64::max)
        })
        .sum::<f64>()
        / 11.0;
    let peak_f1 = pr.iter().map(|&(p, r)| f1(p, r)).fold(0.0, f64::max);
    let gap = pr.iter().map(|(p, r)| (p - r).abs()).fold(f64::INFINITY, f64::min);
    let eer = pr
        .iter()
        .filter(|(p, r)| (p - r).abs() == gap)
        .max_by(|a, b| f1(a.0, a.1).partial_cmp(&f1(b.0, b.1)).unwrap())
        .map(|&(p, r)| (p + r) / 2.0)
        .unwrap();
    Metrics { ap, peak_f1, eer }
}

/// A random scan's detections and people. Positions sit on a 5 cm lattice
/// and scores on a coarse grid often enough to produce exact ties.
pub fn random_scan(rng: &mut ChaCha8Rng, max_dets: usize, max_gts: usize) -> (Vec<PersonCircle>, Vec<PersonCircle>) {
    let coarse = rng.gen_bool(0.5);
    let coord = |rng: &mut ChaCha8Rng, lo: f64, hi: f64| {
        let v = rng.gen_range(lo..hi);
        if coarse {
            (v * 20.0).round() / 20.0
        } else {
            v
        }
    };
    let gts: Vec<PersonCircle> = (0..rng.gen_range(0..=max_gts))
        .map(|_| PersonCircle::at(coord(rng, -1.0, 11.0), coord(rng, -6.0, 6.0), 0.3))
        .collect();
    let mut dets = Vec::new();
    for _ in 0..rng.gen_range(0..=max_dets) {
        let score = if rng.gen_bool(0.3) {
            rng.gen_range(0..10) as f64 / 10.0
        } else {
            rng.gen_range(0.0..1.0)
        };
        let (x, y) = match gts.len() {
            n if n > 0 && rng.gen_bool(0.7) => {
                let g = &gts[rng.gen_range(0..n)];
                (g.x + coord(rng, -0.7, 0.7), g.y + coord(rng, -0.7, 0.7))
            }
            _ => (coord(rng, -1.0, 11.0), coord(rng, -6.0, 6.0)),
        };
        dets.push(PersonCircle::at(x, y, 0.3).with_score(score));
    }
    (dets, gts)
}

/// Reference suppression: repeatedly keep the best remaining proposal and
/// delete everything closer than `distance` to it.
pub fn nms_reference(proposals: &[Proposal], distance: f64) -> Vec<Proposal> {
    let mut left: Vec<Proposal> = proposals.to_vec();
    let mut kept = Vec::new();
    while !left.is_empty() {
        let mut best = 0;
        for (i, p) in left.iter().enumerate() {
            let b = &left[best];
            let (sp, sb) = (p.circle.confidence(), b.circle.confidence());
            if sp > sb || (sp == sb && (p.sector, p.level) < (b.sector, b.level)) {
                best = i;
            }
        }
        let winner = left.swap_remove(best);
        left.retain(|p| dist(&p.circle, &winner.circle) >= distance);
        kept.push(winner);
    }
    kept
}

/// Random proposals on distinct anchors, with tied scores and clusters.
pub fn random_proposals(rng: &mut ChaCha8Rng) -> Vec<Proposal> {
    let n = rng.gen_range(0..60);
    let mut slots: Vec<(usize, usize)> = Vec::new();
    while slots.len() < n {
        let s = (rng.gen_range(0..120), rng.gen_range(0..16));
        if !slots.contains(&s) {
            slots.push(s);
        }
    }
    let spread = [0.3, 1.0, 4.0][rng.gen_range(0..3)];
    slots
        .into_iter()
        .map(|(sector, level)| {
            let score = if rng.gen_bool(0.3) {
                rng.gen_range(1..5) as f64 / 5.0
            } else {
                rng.gen_range(0.01..1.0)
            };
            Proposal {
                circle: PersonCircle::at(3.0 + rng.gen_range(-spread..spread), rng.gen_range(-spread..spread), 0.3)
                    .with_score(score),
                sector,
                level,
            }
        })
        .collect()
}
