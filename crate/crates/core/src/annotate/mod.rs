//! Annotation sessions: per-frame circle editing over a read-only dataset,
//! centroid-following circle tracking, and export.
//!
//! A session owns one circle map per frame keyed by person id. Datasets are
//! shared immutably between sessions; each session sits behind its own
//! lock in a [`SessionRegistry`].

pub mod http;

use crate::dataset::{
    load_dataset, parse_annotations, render_annotations, AnnotationDocument, AnnotationRecord, Dataset, DatasetError,
    ExportFormat, FramePointClasses,
};
use crate::geometry::{LaserScan, PersonCircle, Point2D};
use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use thiserror::Error;

pub const SESSION_FORMAT: &str = "legscan-session";
pub const SESSION_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum AnnotateError {
    #[error("unknown session `{0}`")]
    UnknownSession(String),
    #[error("frame {frame} out of range for {len} frames")]
    FrameOutOfRange { frame: usize, len: usize },
    #[error("no circle with person id {id} in frame {frame}")]
    UnknownCircle { frame: usize, id: u32 },
    #[error("person id {id} already has a circle in frame {frame}")]
    DuplicateId { frame: usize, id: u32 },
    #[error("radius must be positive and finite, got {0}")]
    InvalidRadius(f64),
    #[error("circle center must be finite")]
    InvalidCenter,
    #[error("invalid tracking parameters: {0}")]
    InvalidParams(String),
    #[error("session file: {0}")]
    SessionFile(String),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackParams {
    pub search_inflation: f64,
    pub min_points: usize,
    pub max_jump: f64,
}

impl Default for TrackParams {
    fn default() -> Self {
        Self {
            search_inflation: 1.3,
            min_points: 2,
            max_jump: 0.4,
        }
    }
}

impl TrackParams {
    pub fn validate(&self) -> Result<(), AnnotateError> {
        if !(self.search_inflation >= 1.0 && self.search_inflation.is_finite()) {
            return Err(AnnotateError::InvalidParams(format!(
                "search_inflation {} must be at least 1",
                self.search_inflation
            )));
        }
        if !(self.max_jump >= 0.0 && self.max_jump.is_finite()) {
            return Err(AnnotateError::InvalidParams(format!("max_jump {} must be non-negative", self.max_jump)));
        }
        Ok(())
    }
}

/// An edit to one frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "lowercase")]
pub enum CircleEdit {
    Add {
        x: f64,
        y: f64,
        radius: f64,
        #[serde(default)]
        person_id: Option<u32>,
    },
    Move {
        person_id: u32,
        x: f64,
        y: f64,
    },
    Resize {
        person_id: u32,
        radius: f64,
    },
    Delete {
        person_id: u32,
    },
}

/// Outcome of tracking one circle into the next frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackedCircle {
    pub circle: PersonCircle,
    pub lost: bool,
}

fn centroid_near(scan: &LaserScan, center: &Point2D, radius: f64) -> (Point2D, usize) {
    let (mut sx, mut sy, mut n) = (0.0, 0.0, 0usize);
    for (_, p) in scan.valid_points() {
        if p.distance(center) <= radius {
            sx += p.x;
            sy += p.y;
            n += 1;
        }
    }
    if n == 0 {
        return (*center, 0);
    }
    (Point2D::new(sx / n as f64, sy / n as f64), n)
}

/// Follows `circle` from `current` into `next` by the motion of the point
/// centroid within the inflated radius, if both frames have enough points
/// there and the centroid moved no more than `max_jump`. Otherwise the
/// circle stays put and is reported lost.
pub fn track_circle(circle: &PersonCircle, current: &LaserScan, next: &LaserScan, params: &TrackParams) -> TrackedCircle {
    let center = circle.center();
    let search = circle.radius * params.search_inflation;
    let need = params.min_points.max(1);
    let (c0, n0) = centroid_near(current, &center, search);
    let (c1, n1) = centroid_near(next, &center, search);
    let (dx, dy) = (c1.x - c0.x, c1.y - c0.y);
    if n0 >= need && n1 >= need && dx.hypot(dy) <= params.max_jump {
        let mut moved = PersonCircle::at(center.x + dx, center.y + dy, circle.radius);
        moved.person_id = circle.person_id;
        return TrackedCircle {
            circle: moved,
            lost: false,
        };
    }
    TrackedCircle {
        circle: circle.clone(),
        lost: true,
    }
}

/// Class 1 for beams whose point lies inside any circle, 0 otherwise.
pub fn point_classes(scan: &LaserScan, circles: &[PersonCircle]) -> Vec<u8> {
    (0..scan.len())
        .map(|i| match scan.point(i) {
            Some(p) if circles.iter().any(|c| c.contains(&p)) => 1,
            _ => 0,
        })
        .collect()
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FrameState {
    pub circles: BTreeMap<u32, PersonCircle>,
    pub lost: BTreeSet<u32>,
}

#[derive(Debug, Clone)]
pub struct Session {
    pub id: String,
    pub dataset_path: PathBuf,
    pub dataset: Arc<Dataset>,
    pub current_frame: usize,
    pub frames: Vec<FrameState>,
    pub next_person_id: u32,
    pub dirty: bool,
}

/// Serialized session state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionFile {
    pub format: String,
    pub version: u32,
    pub dataset_path: PathBuf,
    pub current_frame: usize,
    pub next_person_id: u32,
    pub frames: Vec<FrameState>,
}

impl Session {
    /// Circles start from the stored annotations, with fresh person ids.
    pub fn new(id: impl Into<String>, dataset_path: impl Into<PathBuf>, dataset: Arc<Dataset>) -> Result<Self, AnnotateError> {
        let mut next = 1u32;
        let mut frames = Vec::with_capacity(dataset.len());
        for i in 0..dataset.len() {
            let mut state = FrameState::default();
            for mut c in dataset.annotations(i)? {
                c.person_id = Some(next);
                state.circles.insert(next, c);
                next += 1;
            }
            frames.push(state);
        }
        Ok(Self {
            id: id.into(),
            dataset_path: dataset_path.into(),
            dataset,
            current_frame: 0,
            frames,
            next_person_id: next,
            dirty: false,
        })
    }

    pub fn num_frames(&self) -> usize {
        self.frames.len()
    }

    fn check_frame(&self, frame: usize) -> Result<(), AnnotateError> {
        if frame >= self.frames.len() {
            return Err(AnnotateError::FrameOutOfRange {
                frame,
                len: self.frames.len(),
            });
        }
        Ok(())
    }

    pub fn frame(&self, frame: usize) -> Result<&FrameState, AnnotateError> {
        self.check_frame(frame)?;
        Ok(&self.frames[frame])
    }

    pub fn scan(&self, frame: usize) -> Result<LaserScan, AnnotateError> {
        self.check_frame(frame)?;
        Ok(self.dataset.scan(frame)?)
    }

    pub fn circles(&self, frame: usize) -> Result<Vec<PersonCircle>, AnnotateError> {
        Ok(self.frame(frame)?.circles.values().cloned().collect())
    }

    /// Applies one edit and returns the person id it touched.
    pub fn edit(&mut self, frame: usize, edit: &CircleEdit) -> Result<u32, AnnotateError> {
        self.check_frame(frame)?;
        let check_radius = |r: f64| {
            if r > 0.0 && r.is_finite() {
                Ok(())
            } else {
                Err(AnnotateError::InvalidRadius(r))
            }
        };
        let check_center = |x: f64, y: f64| {
            if x.is_finite() && y.is_finite() {
                Ok(())
            } else {
                Err(AnnotateError::InvalidCenter)
            }
        };
        let state = &mut self.frames[frame];
        let id = match *edit {
            CircleEdit::Add { x, y, radius, person_id } => {
                check_center(x, y)?;
                check_radius(radius)?;
                let id = match person_id {
                    Some(id) if state.circles.contains_key(&id) => return Err(AnnotateError::DuplicateId { frame, id }),
                    Some(id) => id,
                    None => self.next_person_id,
                };
                self.next_person_id = self.next_person_id.max(id.saturating_add(1));
                state.circles.insert(id, PersonCircle::at(x, y, radius).with_id(id));
                id
            }
            CircleEdit::Move { person_id, x, y } => {
                check_center(x, y)?;
                let c = state
                    .circles
                    .get_mut(&person_id)
                    .ok_or(AnnotateError::UnknownCircle { frame, id: person_id })?;
                *c = PersonCircle::at(x, y, c.radius).with_id(person_id);
                person_id
            }
            CircleEdit::Resize { person_id, radius } => {
                check_radius(radius)?;
                let c = state
                    .circles
                    .get_mut(&person_id)
                    .ok_or(AnnotateError::UnknownCircle { frame, id: person_id })?;
                *c = PersonCircle::at(c.x, c.y, radius).with_id(person_id);
                person_id
            }
            CircleEdit::Delete { person_id } => {
                state
                    .circles
                    .remove(&person_id)
                    .ok_or(AnnotateError::UnknownCircle { frame, id: person_id })?;
                person_id
            }
        };
        // an edited circle has been looked at, so it is no longer lost
        state.lost.remove(&id);
        self.dirty = true;
        Ok(id)
    }

    /// Tracks every circle of `from` into `from + 1`, replacing circles with
    /// the same person id there. Returns the tracked circles.
    pub fn track_step(&mut self, from: usize, params: &TrackParams) -> Result<Vec<TrackedCircle>, AnnotateError> {
        params.validate()?;
        self.check_frame(from)?;
        let to = from + 1;
        self.check_frame(to)?;
        let current = self.dataset.scan(from)?;
        let next = self.dataset.scan(to)?;
        let tracked: Vec<TrackedCircle> = self.frames[from]
            .circles
            .values()
            .map(|c| track_circle(c, &current, &next, params))
            .collect();
        let target = &mut self.frames[to];
        for t in &tracked {
            let id = t.circle.person_id.expect("session circles carry ids");
            target.circles.insert(id, t.circle.clone());
            if t.lost {
                target.lost.insert(id);
            } else {
                target.lost.remove(&id);
            }
        }
        self.current_frame = to;
        self.dirty = true;
        Ok(tracked)
    }

    /// Circle records and per-point classes of every frame.
    pub fn document(&self) -> Result<AnnotationDocument, AnnotateError> {
        let mut doc = AnnotationDocument::new(self.frames.len(), self.dataset.meta.num_points);
        for (i, state) in self.frames.iter().enumerate() {
            let ts = self.dataset.timestamps[i];
            for (&id, c) in &state.circles {
                doc.records.push(AnnotationRecord {
                    scan_index: i,
                    timestamp: ts,
                    person_id: Some(id),
                    x: c.x,
                    y: c.y,
                    radius: c.radius,
                });
            }
            let circles: Vec<PersonCircle> = state.circles.values().cloned().collect();
            doc.point_classes
                .push(FramePointClasses::new(i, ts, &point_classes(&self.dataset.scan(i)?, &circles)));
        }
        Ok(doc)
    }

    pub fn export(&self, format: ExportFormat) -> Result<String, AnnotateError> {
        Ok(render_annotations(&self.document()?, format)?)
    }

    /// Replaces every frame's circles with those of an exported document.
    pub fn import(&mut self, doc: &AnnotationDocument) -> Result<(), AnnotateError> {
        let per_scan = doc.circles_per_scan(self.frames.len())?;
        let mut next = 1u32;
        let mut frames = Vec::with_capacity(per_scan.len());
        for circles in per_scan {
            let mut state = FrameState::default();
            for c in circles {
                let id = c.person_id.unwrap_or(next);
                next = next.max(id.saturating_add(1));
                state.circles.insert(id, PersonCircle::at(c.x, c.y, c.radius).with_id(id));
            }
            frames.push(state);
        }
        self.frames = frames;
        self.next_person_id = next;
        self.dirty = true;
        Ok(())
    }

    pub fn import_text(&mut self, text: &str, format: ExportFormat) -> Result<(), AnnotateError> {
        self.import(&parse_annotations(text, format)?)
    }

    pub fn to_file(&self) -> SessionFile {
        SessionFile {
            format: SESSION_FORMAT.into(),
            version: SESSION_VERSION,
            dataset_path: self.dataset_path.clone(),
            current_frame: self.current_frame,
            next_person_id: self.next_person_id,
            frames: self.frames.clone(),
        }
    }

    /// Writes the session state as JSON and clears the dirty flag.
    pub fn save(&mut self, path: impl AsRef<Path>) -> Result<(), AnnotateError> {
        let text = serde_json::to_string_pretty(&self.to_file()).map_err(|e| AnnotateError::SessionFile(e.to_string()))?;
        std::fs::write(path, text).map_err(|e| AnnotateError::Dataset(e.into()))?;
        self.dirty = false;
        Ok(())
    }

    pub fn restore(&mut self, file: &SessionFile) -> Result<(), AnnotateError> {
        if file.format != SESSION_FORMAT || file.version != SESSION_VERSION {
            return Err(AnnotateError::SessionFile(format!(
                "unsupported session file {} v{}",
                file.format, file.version
            )));
        }
        if file.frames.len() != self.frames.len() {
            return Err(AnnotateError::SessionFile(format!(
                "{} frames saved, dataset has {}",
                file.frames.len(),
                self.frames.len()
            )));
        }
        self.frames = file.frames.clone();
        self.current_frame = file.current_frame.min(self.frames.len().saturating_sub(1));
        self.next_person_id = file.next_person_id;
        self.dirty = false;
        Ok(())
    }

    /// Default location of the saved state: next to the dataset.
    pub fn sidecar_path(&self) -> PathBuf {
        let mut p = self.dataset_path.clone().into_os_string();
        p.push(".session.json");
        PathBuf::from(p)
    }
}

pub type SessionHandle = Arc<Mutex<Session>>;

/// All open sessions. Datasets are loaded once per path and shared.
#[derive(Debug, Default)]
pub struct SessionRegistry {
    sessions: RwLock<HashMap<String, SessionHandle>>,
    datasets: RwLock<HashMap<PathBuf, Arc<Dataset>>>,
    counter: AtomicU64,
}

impl SessionRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    fn dataset(&self, path: &Path) -> Result<Arc<Dataset>, AnnotateError> {
        if let Some(ds) = self.datasets.read().get(path) {
            return Ok(ds.clone());
        }
        let ds = Arc::new(load_dataset(path)?);
        self.datasets.write().insert(path.to_path_buf(), ds.clone());
        Ok(ds)
    }

    /// Opens a new session on the dataset at `path`, optionally resuming
    /// the saved state next to it.
    pub fn open(&self, path: impl AsRef<Path>, resume: bool) -> Result<SessionHandle, AnnotateError> {
        let path = path.as_ref();
        let ds = self.dataset(path)?;
        let id = format!("s{}", self.counter.fetch_add(1, Ordering::Relaxed) + 1);
        let mut session = Session::new(id.clone(), path, ds)?;
        if resume {
            let sidecar = session.sidecar_path();
            if sidecar.exists() {
                let text = std::fs::read_to_string(&sidecar).map_err(|e| AnnotateError::Dataset(e.into()))?;
                let file: SessionFile =
                    serde_json::from_str(&text).map_err(|e| AnnotateError::SessionFile(e.to_string()))?;
                session.restore(&file)?;
            }
        }
        let handle = Arc::new(Mutex::new(session));
        self.sessions.write().insert(id, handle.clone());
        Ok(handle)
    }

    pub fn get(&self, id: &str) -> Result<SessionHandle, AnnotateError> {
        self.sessions
            .read()
            .get(id)
            .cloned()
            .ok_or_else(|| AnnotateError::UnknownSession(id.into()))
    }

    pub fn close(&self, id: &str) -> Result<(), AnnotateError> {
        self.sessions
            .write()
            .remove(id)
            .map(|_| ())
            .ok_or_else(|| AnnotateError::UnknownSession(id.into()))
    }

    pub fn len(&self) -> usize {
        self.sessions.read().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
