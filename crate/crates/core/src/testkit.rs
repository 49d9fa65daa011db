//! Random instance generators shared by unit, property and acceptance tests.

use crate::dataset::{Dataset, Frame};
use crate::geometry::{PersonCircle, Point2D, SensorMeta};
use crate::synth::{render_scan, PersonState, Pose, World};
use rand::Rng;

/// A dataset with random ranges (a few invalid beams), random valid circles
/// and, optionally, a random split.
pub fn random_dataset<R: Rng>(rng: &mut R, scans: usize, num_points: usize, with_split: bool) -> Dataset {
    let meta = SensorMeta::half_fan(num_points);
    let mut ds = Dataset::empty(meta);
    let mut t = rng.gen_range(1.6e9..1.7e9);
    for _ in 0..scans {
        let ranges = (0..num_points)
            .map(|_| {
                if rng.gen_bool(0.05) {
                    f64::INFINITY
                } else {
                    rng.gen_range(0.0..30.0)
                }
            })
            .collect();
        let count = rng.gen_range(0..4);
        let circles = (0..count)
            .map(|_| {
                let d = rng.gen_range(0.5..12.0);
                let a = rng.gen_range(-1.6..1.6);
                PersonCircle::from_polar(d, a, rng.gen_range(0.1..0.45))
            })
            .collect();
        t += rng.gen_range(0.02..0.03);
        ds.push_frame(&Frame {
            ranges,
            timestamp: t,
            circles,
        })
        .expect("frame length matches meta");
    }
    if with_split {
        ds.split = Some((0..scans).map(|_| u8::from(rng.gen_bool(0.1))).collect());
    }
    ds
}

/// A person walking a straight line at a constant displacement per frame.
#[derive(Debug, Clone, Copy)]
pub struct Walker {
    pub start: Point2D,
    pub step: Point2D,
    pub leg_separation: f64,
    pub leg_radius: f64,
}

impl Walker {
    pub fn new(start: (f64, f64), step: (f64, f64)) -> Self {
        Self {
            start: Point2D::new(start.0, start.1),
            step: Point2D::new(step.0, step.1),
            leg_separation: 0.25,
            leg_radius: 0.06,
        }
    }

    pub fn center(&self, frame: usize) -> Point2D {
        Point2D::new(self.start.x + self.step.x * frame as f64, self.start.y + self.step.y * frame as f64)
    }
}

/// Renders walkers in an empty world, one frame per step, with their true
/// circles as annotations (person ids are walker indices). Also returns
/// the true centers per frame.
pub fn walker_dataset(meta: SensorMeta, walkers: &[Walker], frames: usize, noise_sigma: f64) -> (Dataset, Vec<Vec<Point2D>>) {
    let mut ds = Dataset::empty(meta);
    let mut truth = Vec::with_capacity(frames);
    for k in 0..frames {
        let people = walkers
            .iter()
            .enumerate()
            .map(|(i, w)| PersonState {
                center: w.center(k),
                heading: w.step.y.atan2(w.step.x),
                speed: w.step.norm() * meta.frequency,
                leg_separation: w.leg_separation,
                leg_radius: w.leg_radius,
                gait_phase: (2.0 * std::f64::consts::PI * (0.5 + 1.3 * w.step.norm() * meta.frequency) / meta.frequency * k as f64) % (2.0 * std::f64::consts::PI),
                person_id: i as u32,
            })
            .collect();
        let world = World {
            segments: Vec::new(),
            pillars: Vec::new(),
            people,
            rng_seed: 11,
            arena: [-50.0, 50.0, -50.0, 50.0],
            sensor_clearance: 0.5,
            reach: 50.0,
            step_index: k as u64,
        };
        let r = render_scan(&world, &meta, Pose::default(), noise_sigma);
        ds.push_frame(&Frame {
            ranges: r.ranges,
            timestamp: k as f64 / meta.frequency,
            circles: r.people,
        })
        .expect("frame length matches meta");
        truth.push(walkers.iter().map(|w| w.center(k)).collect());
    }
    (ds, truth)
}

/// Central finite-difference gradient checks against the graph engine.
pub mod gradcheck {
    use crate::nn::{Graph, NnError, NodeId, ParamStore, Tensor1D};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub const H: f64 = 1e-5;

    /// Builds the scalar under test from the recorded inputs.
    pub type Build<'a> = dyn Fn(&mut Graph, &ParamStore, &[NodeId]) -> Result<NodeId, NnError> + 'a;

    pub fn rand_tensor(rng: &mut ChaCha8Rng, b: usize, c: usize, l: usize) -> Tensor1D {
        let data = (0..b * c * l).map(|_| rng.gen_range(-1.0..1.0)).collect();
        Tensor1D::from_vec(b, c, l, data).unwrap()
    }

    pub fn rel_err(a: f64, n: f64) -> f64 {
        (a - n).abs() / a.abs().max(n.abs()).max(1e-3)
    }

    /// Compares analytic gradients of every input and parameter with central
    /// differences. The same seed is used for every pass, so dropout masks are
    /// identical. Returns the largest relative error.
    pub fn check(inputs: &[Tensor1D], store: &ParamStore, seed: u64, training: bool, build: &Build) -> f64 {
        let run = |inputs: &[Tensor1D], store: &ParamStore| -> (Graph, NodeId, Vec<NodeId>) {
            let mut g = if training {
                Graph::training(seed)
            } else {
                Graph::inference()
            };
            let ids: Vec<NodeId> = inputs.iter().map(|t| g.input(t.clone()).unwrap()).collect();
            let loss = build(&mut g, store, &ids).expect("build");
            (g, loss, ids)
        };
        let (g, loss, ids) = run(inputs, store);
        let grads = g.backward(loss).unwrap();
        let mut worst: f64 = 0.0;

        for (k, id) in ids.iter().enumerate() {
            let analytic = grads.node(*id).map(|s| s.to_vec()).unwrap_or_else(|| vec![0.0; inputs[k].numel()]);
            for e in 0..inputs[k].numel() {
                let mut plus = inputs.to_vec();
                plus[k].data[e] += H;
                let mut minus = inputs.to_vec();
                minus[k].data[e] -= H;
                let (gp, lp, _) = run(&plus, store);
                let (gm, lm, _) = run(&minus, store);
                let numeric = (gp.value(lp).data[0] - gm.value(lm).data[0]) / (2.0 * H);
                worst = worst.max(rel_err(analytic[e], numeric));
            }
        }
        for (pid, p) in store.iter() {
            if !p.trainable {
                continue;
            }
            let analytic = grads.param(pid).map(|s| s.to_vec()).unwrap_or_else(|| vec![0.0; p.values.len()]);
            for e in 0..p.values.len() {
                let mut sp = store.clone();
                sp.values_mut(pid)[e] += H;
                let mut sm = store.clone();
                sm.values_mut(pid)[e] -= H;
                let (gp, lp, _) = run(inputs, &sp);
                let (gm, lm, _) = run(inputs, &sm);
                let numeric = (gp.value(lp).data[0] - gm.value(lm).data[0]) / (2.0 * H);
                worst = worst.max(rel_err(analytic[e], numeric));
            }
        }
        worst
    }

    /// Random projection to a scalar so every output element matters.
    pub fn project(g: &mut Graph, x: NodeId, seed: u64) -> Result<NodeId, NnError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xABCD);
        let coeffs: Vec<f64> = (0..g.value(x).numel()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        g.weighted_sum(x, &coeffs)
    }
}
