use super::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn det(x: f64, y: f64, score: f64) -> PersonCircle {
    PersonCircle::at(x, y, 0.3).with_score(score)
}

fn gt(x: f64, y: f64) -> PersonCircle {
    PersonCircle::at(x, y, 0.3)
}

fn curve(points: &[(f64, f64)]) -> PrCurve {
    PrCurve {
        points: points
            .iter()
            .enumerate()
            .map(|(i, &(precision, recall))| CurvePoint {
                threshold: 1.0 - i as f64 * 0.01,
                precision,
                recall,
                tp: 0,
                fp: 0,
            })
            .collect(),
        total_gt: 1,
    }
}

#[test]
fn filter_examples() {
    let kept = filter_detections(&[det(1.0, 0.0, 0.009), det(10.5, 0.0, 0.9), det(3.0, 0.0, 0.5), det(0.0, 10.0, 0.01)]);
    assert_eq!(kept, vec![det(3.0, 0.0, 0.5), det(0.0, 10.0, 0.01)]);
}

#[test]
fn matching_examples() {
    assert_eq!(match_scan(&[det(1.0, 0.2, 0.9)], &[gt(1.0, 0.0)], 0.5), vec![true]);
    assert_eq!(match_scan(&[det(1.0, 0.6, 0.9)], &[gt(1.0, 0.0)], 0.5), vec![false]);
    // higher score claims the person even though the other one is closer
    let dets = [det(1.1, 0.0, 0.3), det(1.4, 0.0, 0.8)];
    assert_eq!(match_scan(&dets, &[gt(1.0, 0.0)], 0.5), vec![false, true]);
    // equal scores: earlier detection first; equidistant people: lower index
    let dets = [det(0.0, 0.0, 0.5), det(0.0, 0.1, 0.5)];
    let gts = [gt(0.2, 0.0), gt(-0.2, 0.0)];
    assert_eq!(match_scan(&dets, &gts, 0.5), vec![true, true]);
    assert_eq!(match_scan(&dets[..1], &gts, 0.5), vec![true]);
    assert_eq!(match_scan(&[det(0.0, 0.0, 0.5)], &[], 0.5), vec![false]);
}

#[test]
fn duplicates_are_false_positives() {
    let dets = [det(1.0, 0.0, 0.9), det(1.0, 0.0, 0.8), det(1.0, 0.0, 0.7)];
    let r = evaluate_detections("dup", &[dets.to_vec()], &[vec![gt(1.0, 0.0)]], &[0.5]).unwrap();
    let last = r.results[0].curve.points.last().unwrap();
    assert_eq!((last.tp, last.fp), (1, 2));
    assert_eq!(r.results[0].ap, 1.0);
}

#[test]
fn curve_examples() {
    let all_tp = pr_curve(&[(0.9, true), (0.8, true)], 4).unwrap();
    let last = all_tp.points.last().unwrap();
    assert_eq!((last.precision, last.recall), (1.0, 0.5));
    let perfect = pr_curve(&[(1.0, true), (1.0, true)], 2).unwrap();
    assert_eq!(perfect.points.len(), 1);
    assert_eq!((perfect.points[0].precision, perfect.points[0].recall), (1.0, 1.0));
    // a shared score collapses into one point
    let tied = pr_curve(&[(0.5, true), (0.5, false), (0.4, true)], 3).unwrap();
    assert_eq!(tied.points.len(), 2);
    assert_eq!((tied.points[0].tp, tied.points[0].fp), (1, 1));
    assert!(matches!(pr_curve(&[(0.5, false)], 0), Err(EvalError::NoGroundTruth)));
}

#[test]
fn metric_examples() {
    let perfect = curve(&[(1.0, 1.0)]);
    assert_eq!(average_precision_11pt(&perfect), 1.0);
    assert_eq!(peak_f1(&perfect), 1.0);
    assert_eq!(eer(&perfect), 1.0);

    let partial = curve(&[(1.0, 0.1), (1.0, 0.3), (1.0, 0.55)]);
    assert!((average_precision_11pt(&partial) - 6.0 / 11.0).abs() < 1e-15);

    let two = curve(&[(1.0, 0.5), (0.5, 1.0)]);
    assert!((peak_f1(&two) - 2.0 / 3.0).abs() < 1e-15);

    let three = curve(&[(0.9, 0.5), (0.6, 0.62), (0.4, 0.8)]);
    assert!((eer(&three) - 0.61).abs() < 1e-15);
    assert!((eer(&curve(&[(0.718, 0.718)])) - 0.718).abs() < 1e-15);

    let empty = curve(&[]);
    assert_eq!((average_precision_11pt(&empty), peak_f1(&empty), eer(&empty)), (0.0, 0.0, 0.0));
}

#[test]
fn eer_ties_go_to_the_higher_f1() {
    let c = curve(&[(0.5, 0.25), (0.75, 0.5)]);
    assert_eq!(eer(&c), 0.625);
}

fn random_scans(rng: &mut ChaCha8Rng, scans: usize) -> (Vec<Vec<PersonCircle>>, Vec<Vec<PersonCircle>>) {
    let mut dets = Vec::new();
    let mut gts = Vec::new();
    for _ in 0..scans {
        let g: Vec<PersonCircle> = (0..rng.gen_range(0..5)).map(|_| gt(rng.gen_range(0.0..4.0), rng.gen_range(-2.0..2.0))).collect();
        let mut d: Vec<PersonCircle> = Vec::new();
        for p in &g {
            for _ in 0..rng.gen_range(0..3) {
                d.push(det(p.x + rng.gen_range(-0.6..0.6), p.y + rng.gen_range(-0.6..0.6), (rng.gen_range(0..20) as f64) / 20.0));
            }
        }
        for _ in 0..rng.gen_range(0..3) {
            d.push(det(rng.gen_range(0.0..4.0), rng.gen_range(-2.0..2.0), rng.gen_range(0.0..1.0)));
        }
        dets.push(d);
        gts.push(g);
    }
    (dets, gts)
}

proptest! {
    #[test]
    fn curve_invariants(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (dets, mut gts) = random_scans(&mut rng, 10);
        gts.push(vec![gt(1.0, 1.0)]);
        let mut dets = dets;
        dets.push(Vec::new());
        let r = evaluate_detections("random", &dets, &gts, &ASSOCIATION_DISTANCES).unwrap();
        for res in &r.results {
            let pts = &res.curve.points;
            for w in pts.windows(2) {
                prop_assert!(w[1].tp >= w[0].tp);
                prop_assert!(w[1].tp + w[1].fp > w[0].tp + w[0].fp);
                prop_assert!(w[1].recall >= w[0].recall);
                prop_assert!(w[1].threshold < w[0].threshold);
            }
            prop_assert!(pts.iter().all(|p| p.tp <= res.curve.total_gt));
            for v in [res.ap, res.peak_f1, res.eer] {
                prop_assert!((0.0..=1.0).contains(&v));
            }
        }
    }

    #[test]
    fn metrics_only_depend_on_score_order(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (dets, mut gts) = random_scans(&mut rng, 8);
        gts[0].push(gt(2.0, 0.0));
        // strictly increasing and keeps every score inside [0.01, 1]
        let squash = |s: f64| 0.01 + 0.99 * s.max(0.01).powi(3);
        let moved: Vec<Vec<PersonCircle>> = dets
            .iter()
            .map(|d| d.iter().map(|c| c.clone().with_score(squash(c.confidence()))).collect())
            .collect();
        let kept: Vec<Vec<PersonCircle>> = dets
            .iter()
            .map(|d| d.iter().map(|c| c.clone().with_score(c.confidence().max(0.01))).collect())
            .collect();
        let a = evaluate_detections("a", &kept, &gts, &[0.5]).unwrap();
        let b = evaluate_detections("b", &moved, &gts, &[0.5]).unwrap();
        prop_assert_eq!(a.results[0].ap, b.results[0].ap);
        prop_assert_eq!(a.results[0].peak_f1, b.results[0].peak_f1);
        prop_assert_eq!(a.results[0].eer, b.results[0].eer);
    }
}

#[test]
fn empty_detector_scores_zero() {
    let r = evaluate_detections("empty", &[vec![], vec![]], &[vec![gt(1.0, 0.0)], vec![]], &ASSOCIATION_DISTANCES).unwrap();
    for res in &r.results {
        assert_eq!((res.ap, res.peak_f1, res.eer), (0.0, 0.0, 0.0));
    }
}

#[test]
fn ground_truth_beyond_range_is_not_counted() {
    let gts = vec![vec![gt(3.0, 0.0), gt(10.5, 0.0)]];
    let dets = vec![vec![det(3.0, 0.0, 1.0), det(10.5, 0.0, 1.0)]];
    let r = evaluate_detections("oracle", &dets, &gts, &[0.5]).unwrap();
    assert_eq!(r.results[0].curve.total_gt, 1);
    assert_eq!(r.results[0].ap, 1.0);
}

#[test]
fn files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let per_scan = vec![vec![det(1.0, 2.0, 0.7)], vec![], vec![det(-1.0, 0.5, 0.2), det(3.0, 0.0, 0.9)]];
    let file = DetectionFile::new("test", &[4, 9, 12], &per_scan);
    let path = dir.path().join("d.json");
    write_detections(&file, &path).unwrap();
    let back = read_detections(&path).unwrap();
    assert_eq!(back, file);
    let scans = back.per_scan().unwrap();
    assert_eq!(scans.len(), 3);
    assert_eq!(scans[2][1].confidence(), 0.9);

    let gts = vec![vec![gt(1.0, 2.0)], vec![], vec![gt(3.0, 0.1)]];
    let report = evaluate_detections("test", &scans, &gts, &ASSOCIATION_DISTANCES).unwrap();
    let rp = dir.path().join("r.json");
    write_report(&report, &rp).unwrap();
    assert_eq!(read_report(&rp).unwrap(), report);
    assert!(read_report(&path).is_err());
    let csv = render_curve_csv(&report);
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("association_distance,threshold,precision,recall,tp,fp"));
    assert_eq!(lines.count(), report.results.iter().map(|r| r.curve.points.len()).sum::<usize>());

    let stray = DetectionFile::new("x", &[1], &[vec![]]);
    let mut stray = stray;
    stray.detections.push(DetectionRecord {
        scan_index: 5,
        score: 0.5,
        x: 0.0,
        y: 0.0,
    });
    assert!(matches!(stray.per_scan(), Err(EvalError::ScanIndex(5))));
}

#[test]
fn latency_of_the_empty_detector() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let ds = crate::testkit::random_dataset(&mut rng, 10, 72, false);
    let idx: Vec<usize> = (0..10).collect();
    let stats = latency_bench(&EmptyDetector, &ds, &idx, 3).unwrap();
    assert_eq!(stats.samples, 30);
    assert!(stats.median_ms < 1e-3, "{stats:?}");
    let s = LatencyStats::from_samples(vec![4.0, 1.0, 3.0, 2.0]);
    assert_eq!((s.mean_ms, s.median_ms, s.p99_ms), (2.5, 2.5, 4.0));
}
