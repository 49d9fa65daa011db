//! Deterministic 2D world simulator: walls, pillars and walking people
//! (two leg circles each), raycast into labeled scans.
//!
//! Every random draw comes from a ChaCha stream seeded by `(seed, index)`,
//! so worlds, steps and rendered frames are reproducible individually.

use crate::dataset::{Dataset, DatasetError, Frame};
use crate::geometry::{PersonCircle, Point2D, SensorMeta};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("infeasible world configuration: {0}")]
    Infeasible(String),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
}

/// Extra margin around a person's leg pair in the ground-truth circle.
pub const GT_MARGIN: f64 = 0.05;
/// Minimum gap kept between a person's circle and any obstacle.
const CLEARANCE: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub meta: SensorMeta,
    /// Axis-aligned arena `[x_min, x_max] x [y_min, y_max]` bounded by walls.
    pub arena: [f64; 4],
    pub interior_walls: usize,
    pub pillars: usize,
    pub pillar_radius: (f64, f64),
    pub people: usize,
    pub speed: (f64, f64),
    pub noise_sigma: f64,
    pub scans: usize,
    /// Scans rendered per world before a fresh world is generated.
    pub scene_length: usize,
    pub val_fraction: f64,
    pub start_time: f64,
    /// People keep at least this distance from the sensor.
    pub sensor_clearance: f64,
    pub max_placement_attempts: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            meta: SensorMeta::frog(),
            arena: [-1.5, 11.0, -7.0, 7.0],
            interior_walls: 2,
            pillars: 4,
            pillar_radius: (0.12, 0.35),
            people: 4,
            speed: (0.0, 1.5),
            noise_sigma: 0.01,
            scans: 1000,
            scene_length: 50,
            val_fraction: 0.1,
            start_time: 1_650_000_000.0,
            sensor_clearance: 0.8,
            max_placement_attempts: 2000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub a: Point2D,
    pub b: Point2D,
}

impl Segment {
    pub fn distance_to(&self, p: &Point2D) -> f64 {
        let (dx, dy) = (self.b.x - self.a.x, self.b.y - self.a.y);
        let len2 = dx * dx + dy * dy;
        let t = if len2 == 0.0 {
            0.0
        } else {
            (((p.x - self.a.x) * dx + (p.y - self.a.y) * dy) / len2).clamp(0.0, 1.0)
        };
        Point2D::new(self.a.x + t * dx, self.a.y + t * dy).distance(p)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Circle {
    pub center: Point2D,
    pub radius: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PersonState {
    pub center: Point2D,
    pub heading: f64,
    pub speed: f64,
    /// Lateral distance between the two leg centers.
    pub leg_separation: f64,
    pub leg_radius: f64,
    pub gait_phase: f64,
    pub person_id: u32,
}

impl PersonState {
    /// Radius of the annotation circle enclosing both legs.
    pub fn gt_radius(&self) -> f64 {
        self.leg_separation / 2.0 + self.leg_radius + GT_MARGIN
    }

    /// Fore/aft swing of each leg, bounded so both legs stay inside the
    /// annotation circle.
    fn stride_amplitude(&self) -> f64 {
        let half = self.leg_separation / 2.0;
        0.8 * ((half + GT_MARGIN).powi(2) - half * half).sqrt()
    }

    fn cadence(&self) -> f64 {
        0.5 + 1.3 * self.speed
    }

    pub fn legs(&self) -> [Circle; 2] {
        let (s, c) = self.heading.sin_cos();
        let half = self.leg_separation / 2.0;
        let swing = self.stride_amplitude() * self.gait_phase.sin();
        // left leg forward when swing > 0, right leg in antiphase
        let left = Point2D::new(
            self.center.x - half * s + swing * c,
            self.center.y + half * c + swing * s,
        );
        let right = Point2D::new(
            self.center.x + half * s - swing * c,
            self.center.y - half * c - swing * s,
        );
        [
            Circle {
                center: left,
                radius: self.leg_radius,
            },
            Circle {
                center: right,
                radius: self.leg_radius,
            },
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct World {
    pub segments: Vec<Segment>,
    pub pillars: Vec<Circle>,
    pub people: Vec<PersonState>,
    pub rng_seed: u64,
    pub arena: [f64; 4],
    pub sensor_clearance: f64,
    /// People turn around before leaving this distance from the sensor.
    pub reach: f64,
    /// Number of steps taken since generation.
    pub step_index: u64,
}

/// Sensor pose in world coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

/// Mixes a seed with a stream index into an independent seed.
pub fn mix_seed(seed: u64, stream: u64) -> u64 {
    // splitmix64 finalizer over the combined value
    let mut z = seed ^ stream.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl World {
    fn arena_walls(arena: [f64; 4]) -> Vec<Segment> {
        let [x0, x1, y0, y1] = arena;
        let corners = [
            Point2D::new(x0, y0),
            Point2D::new(x1, y0),
            Point2D::new(x1, y1),
            Point2D::new(x0, y1),
        ];
        (0..4)
            .map(|i| Segment {
                a: corners[i],
                b: corners[(i + 1) % 4],
            })
            .collect()
    }

    /// Whether a person circle of `radius` at `p` keeps clear of walls,
    /// pillars, the sensor and the `others`.
    fn is_free(&self, p: &Point2D, radius: f64, others: &[(Point2D, f64)]) -> bool {
        let [x0, x1, y0, y1] = self.arena;
        if p.x - radius < x0 + CLEARANCE
            || p.x + radius > x1 - CLEARANCE
            || p.y - radius < y0 + CLEARANCE
            || p.y + radius > y1 - CLEARANCE
        {
            return false;
        }
        if p.norm() < self.sensor_clearance + radius {
            return false;
        }
        if self.segments.iter().any(|s| s.distance_to(p) < radius + CLEARANCE) {
            return false;
        }
        if self
            .pillars
            .iter()
            .any(|c| c.center.distance(p) < radius + c.radius + CLEARANCE)
        {
            return false;
        }
        others
            .iter()
            .all(|(q, r)| q.distance(p) >= radius + r + CLEARANCE)
    }
}

pub fn generate_world(config: &SynthConfig, seed: u64) -> Result<World, SynthError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let [x0, x1, y0, y1] = config.arena;
    if !(x1 > x0 && y1 > y0) || !(x0 < 0.0 && x1 > 0.0 && y0 < 0.0 && y1 > 0.0) {
        return Err(SynthError::Infeasible("arena must surround the sensor origin".into()));
    }
    let mut world = World {
        segments: World::arena_walls(config.arena),
        pillars: Vec::new(),
        people: Vec::new(),
        rng_seed: seed,
        arena: config.arena,
        sensor_clearance: config.sensor_clearance,
        reach: config.meta.range_max - 0.5,
        step_index: 0,
    };

    let attempts = config.max_placement_attempts;
    let wall_room = x1 - x0 > 2.5 && y1 - y0 > 2.5;
    for _ in 0..config.interior_walls {
        if !wall_room {
            break;
        }
        let placed = (0..attempts).find_map(|_| {
            let c = Point2D::new(rng.gen_range(x0 + 1.0..x1 - 1.0), rng.gen_range(y0 + 1.0..y1 - 1.0));
            let len = rng.gen_range(1.0..4.0);
            let dir: f64 = rng.gen_range(0.0..PI);
            let (s, co) = dir.sin_cos();
            let seg = Segment {
                a: Point2D::new(c.x - 0.5 * len * co, c.y - 0.5 * len * s),
                b: Point2D::new(c.x + 0.5 * len * co, c.y + 0.5 * len * s),
            };
            (seg.distance_to(&Point2D::default()) > config.sensor_clearance + 1.0).then_some(seg)
        });
        if let Some(seg) = placed {
            world.segments.push(seg);
        }
    }

    for _ in 0..config.pillars {
        let placed = (0..attempts).find_map(|_| {
            let radius = rng.gen_range(config.pillar_radius.0..=config.pillar_radius.1);
            let p = Point2D::new(rng.gen_range(x0..x1), rng.gen_range(y0..y1));
            let clear_walls = world.segments.iter().all(|s| s.distance_to(&p) > radius + 0.2);
            let clear_pillars = world
                .pillars
                .iter()
                .all(|c| c.center.distance(&p) > radius + c.radius + 0.2);
            (clear_walls && clear_pillars && p.norm() > config.sensor_clearance + radius + 0.5)
                .then_some(Circle { center: p, radius })
        });
        if let Some(c) = placed {
            world.pillars.push(c);
        }
    }

    let reach = world.reach;
    for id in 0..config.people {
        let mut placed = None;
        for _ in 0..attempts {
            let leg_separation = rng.gen_range(0.10..=0.45);
            let leg_radius = rng.gen_range(0.04..=0.09);
            let radius = leg_separation / 2.0 + leg_radius + GT_MARGIN;
            let dist = rng.gen_range(config.sensor_clearance + radius..reach);
            let bearing = rng.gen_range(config.meta.angle_min..config.meta.angle_max());
            let p = Point2D::from_polar(dist, bearing);
            let others: Vec<(Point2D, f64)> =
                world.people.iter().map(|q| (q.center, q.gt_radius())).collect();
            if world.is_free(&p, radius, &others) {
                placed = Some(PersonState {
                    center: p,
                    heading: rng.gen_range(-PI..PI),
                    speed: rng.gen_range(config.speed.0..=config.speed.1),
                    leg_separation,
                    leg_radius,
                    gait_phase: rng.gen_range(0.0..2.0 * PI),
                    person_id: id as u32,
                });
                break;
            }
        }
        match placed {
            Some(p) => world.people.push(p),
            None => {
                return Err(SynthError::Infeasible(format!(
                    "could not place person {id} collision-free after {attempts} attempts"
                )))
            }
        }
    }
    Ok(world)
}

/// Advances every person by `speed * dt` along its heading. A person whose
/// next position would violate clearance stays put and picks a new heading.
pub fn step_world(world: &World, dt: f64) -> World {
    let mut next = world.clone();
    next.step_index += 1;
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(world.rng_seed, world.step_index.wrapping_add(1 << 40)));
    let reach = world.reach;
    for i in 0..next.people.len() {
        let others: Vec<(Point2D, f64)> = next
            .people
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != i)
            .map(|(_, q)| (q.center, q.gt_radius()))
            .collect();
        let p = &next.people[i];
        let radius = p.gt_radius();
        let jitter: f64 = rng.gen_range(-0.02..0.02);
        let new_heading: f64 = rng.gen_range(-PI..PI);
        let (s, c) = p.heading.sin_cos();
        let cand = Point2D::new(p.center.x + p.speed * dt * c, p.center.y + p.speed * dt * s);
        let ok = next.is_free(&cand, radius, &others) && cand.norm() < reach;
        let person = &mut next.people[i];
        person.gait_phase = (person.gait_phase + 2.0 * PI * person.cadence() * dt) % (2.0 * PI);
        if ok {
            person.center = cand;
            person.heading = crate::geometry::wrap_angle(person.heading + jitter);
        } else {
            person.heading = new_heading;
        }
    }
    next
}

/// Distance along the ray `origin + t * dir` (unit `dir`) to the circle, if hit.
#[inline]
pub fn ray_circle(origin: Point2D, dir: (f64, f64), c: &Circle) -> Option<f64> {
    let (ox, oy) = (c.center.x - origin.x, c.center.y - origin.y);
    let tca = ox * dir.0 + oy * dir.1;
    let d2 = ox * ox + oy * oy - tca * tca;
    let r2 = c.radius * c.radius;
    if d2 > r2 {
        return None;
    }
    let thc = (r2 - d2).sqrt();
    let t0 = tca - thc;
    if t0 > 0.0 {
        Some(t0)
    } else if tca + thc > 0.0 {
        Some(tca + thc)
    } else {
        None
    }
}

#[inline]
pub fn ray_segment(origin: Point2D, dir: (f64, f64), s: &Segment) -> Option<f64> {
    let (ex, ey) = (s.b.x - s.a.x, s.b.y - s.a.y);
    let denom = dir.0 * ey - dir.1 * ex;
    if denom.abs() < 1e-15 {
        return None;
    }
    let (wx, wy) = (s.a.x - origin.x, s.a.y - origin.y);
    let t = (wx * ey - wy * ex) / denom;
    let u = (wx * dir.1 - wy * dir.0) / denom;
    (t > 0.0 && (0.0..=1.0).contains(&u)).then_some(t)
}

/// What a beam hit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Hit {
    None,
    Wall(usize),
    Pillar(usize),
    Leg { person: usize, leg: usize },
}

/// Noise-free nearest intersection of one ray with the world.
pub fn cast_ray(world: &World, legs: &[[Circle; 2]], origin: Point2D, angle: f64) -> (f64, Hit) {
    let dir = (angle.cos(), angle.sin());
    let mut best = (f64::INFINITY, Hit::None);
    for (i, s) in world.segments.iter().enumerate() {
        if let Some(t) = ray_segment(origin, dir, s) {
            if t < best.0 {
                best = (t, Hit::Wall(i));
            }
        }
    }
    for (i, c) in world.pillars.iter().enumerate() {
        if let Some(t) = ray_circle(origin, dir, c) {
            if t < best.0 {
                best = (t, Hit::Pillar(i));
            }
        }
    }
    for (p, pair) in legs.iter().enumerate() {
        for (l, c) in pair.iter().enumerate() {
            if let Some(t) = ray_circle(origin, dir, c) {
                if t < best.0 {
                    best = (t, Hit::Leg { person: p, leg: l });
                }
            }
        }
    }
    best
}

/// A rendered frame: ranges, per-beam hit labels and the visible people.
#[derive(Debug, Clone)]
pub struct RenderedScan {
    pub ranges: Vec<f64>,
    pub hits: Vec<Hit>,
    pub people: Vec<PersonCircle>,
}

/// Raycasts the world from `pose`. Ranges get zero-mean Gaussian noise of
/// `noise_sigma`; beams without a hit are `+inf`. People with no beam
/// return within `range_max` are left out of the ground truth.
pub fn render_scan(world: &World, meta: &SensorMeta, pose: Pose, noise_sigma: f64) -> RenderedScan {
    let legs: Vec<[Circle; 2]> = world.people.iter().map(PersonState::legs).collect();
    let origin = Point2D::new(pose.x, pose.y);
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(world.rng_seed, world.step_index));
    let noise = Normal::new(0.0, noise_sigma.max(0.0)).expect("finite sigma");
    let mut ranges = Vec::with_capacity(meta.num_points);
    let mut hits = Vec::with_capacity(meta.num_points);
    let mut seen = vec![false; world.people.len()];
    for i in 0..meta.num_points {
        let (t, hit) = cast_ray(world, &legs, origin, pose.theta + meta.angle_of(i));
        let r = if t.is_finite() {
            if noise_sigma > 0.0 {
                (t + noise.sample(&mut rng)).max(0.0)
            } else {
                t
            }
        } else {
            f64::INFINITY
        };
        if let Hit::Leg { person, .. } = hit {
            if r <= meta.range_max {
                seen[person] = true;
            }
        }
        ranges.push(r);
        hits.push(hit);
    }
    let (s, c) = pose.theta.sin_cos();
    let people = world
        .people
        .iter()
        .zip(&seen)
        .filter(|(_, &v)| v)
        .map(|(p, _)| {
            // world -> sensor frame
            let (dx, dy) = (p.center.x - pose.x, p.center.y - pose.y);
            PersonCircle::at(c * dx + s * dy, -s * dx + c * dy, p.gt_radius()).with_id(p.person_id)
        })
        .collect();
    RenderedScan {
        ranges,
        hits,
        people,
    }
}

/// Simulated dataset plus the per-frame ground truth as generated, kept as
/// an independent log for checks against the stored annotations.
#[derive(Debug, Clone)]
pub struct GeneratedDataset {
    pub dataset: Dataset,
    pub truth: Vec<Vec<PersonCircle>>,
}

pub fn generate_dataset(config: &SynthConfig, seed: u64) -> Result<Dataset, SynthError> {
    Ok(generate_dataset_with_truth(config, seed)?.dataset)
}

/// Steps worlds at the sensor frequency, renders every frame and assigns a
/// random 90:10 train/validation split.
pub fn generate_dataset_with_truth(config: &SynthConfig, seed: u64) -> Result<GeneratedDataset, SynthError> {
    config.meta.validate().map_err(DatasetError::from)?;
    let dt = config.meta.period();
    let scene_length = config.scene_length.max(1);
    let mut ds = Dataset::empty(config.meta);
    let mut truth = Vec::with_capacity(config.scans);
    let mut world = None;
    for k in 0..config.scans {
        if k % scene_length == 0 {
            world = Some(generate_world(config, mix_seed(seed, (k / scene_length) as u64))?);
        }
        let w = world.as_mut().expect("world initialised");
        let frame = render_scan(w, &config.meta, Pose::default(), config.noise_sigma);
        ds.push_frame(&Frame {
            ranges: frame.ranges,
            timestamp: config.start_time + k as f64 * dt,
            circles: frame.people.clone(),
        })?;
        truth.push(frame.people);
        *w = step_world(w, dt);
    }
    let mut order: Vec<usize> = (0..config.scans).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(mix_seed(seed, u64::MAX)));
    let n_val = (config.scans as f64 * config.val_fraction).round() as usize;
    let mut split = vec![crate::dataset::SPLIT_TRAIN; config.scans];
    for &i in &order[..n_val] {
        split[i] = crate::dataset::SPLIT_VAL;
    }
    ds.split = Some(split);
    ds.validate()?;
    Ok(GeneratedDataset { dataset: ds, truth })
}
