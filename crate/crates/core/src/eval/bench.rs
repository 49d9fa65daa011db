//! Single-threaded per-scan latency.

use super::EvalError;
use crate::dataset::Dataset;
use crate::detector::Detector;
use crate::geometry::LaserScan;
use serde::{Deserialize, Serialize};
use std::time::Instant;

pub const WARMUP_SCANS: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub samples: usize,
    pub mean_ms: f64,
    pub median_ms: f64,
    pub p99_ms: f64,
}

impl LatencyStats {
    /// Nearest-rank statistics of per-scan times in milliseconds.
    pub fn from_samples(mut ms: Vec<f64>) -> Self {
        if ms.is_empty() {
            return Self {
                samples: 0,
                mean_ms: 0.0,
                median_ms: 0.0,
                p99_ms: 0.0,
            };
        }
        ms.sort_by(f64::total_cmp);
        let n = ms.len();
        let rank = |q: f64| ms[((q * n as f64).ceil() as usize).clamp(1, n) - 1];
        Self {
            samples: n,
            mean_ms: ms.iter().sum::<f64>() / n as f64,
            median_ms: if n % 2 == 1 {
                ms[n / 2]
            } else {
                0.5 * (ms[n / 2 - 1] + ms[n / 2])
            },
            p99_ms: rank(0.99),
        }
    }
}

/// Times `detector` on every listed scan, `repetitions` times over, after
/// running it on 50 scans (cycling through the view) to warm up.
pub fn latency_bench(
    detector: &dyn Detector,
    ds: &Dataset,
    indices: &[usize],
    repetitions: usize,
) -> Result<LatencyStats, EvalError> {
    let scans: Vec<LaserScan> = indices.iter().map(|&i| ds.scan(i)).collect::<Result<_, _>>()?;
    if scans.is_empty() {
        return Ok(LatencyStats::from_samples(Vec::new()));
    }
    for scan in scans.iter().cycle().take(WARMUP_SCANS) {
        std::hint::black_box(detector.detect(scan)?);
    }
    let mut ms = Vec::with_capacity(scans.len() * repetitions);
    for _ in 0..repetitions {
        for scan in &scans {
            let t = Instant::now();
            std::hint::black_box(detector.detect(scan)?);
            ms.push(t.elapsed().as_secs_f64() * 1e3);
        }
    }
    Ok(LatencyStats::from_samples(ms))
}
