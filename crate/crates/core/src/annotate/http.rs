//! JSON-over-HTTP API for the annotation workbench.
//!
//! Every JSON response carries `"version": 1`. Errors are
//! `{"version": 1, "error": "..."}` with 404 for unknown sessions, frames
//! or circles, 400 for rejected requests and 500 for write failures.
//!
//! | route | body / query | response |
//! |---|---|---|
//! | `POST /sessions` | `{dataset_path, resume?}` | `{session_id, num_frames}` |
//! | `GET /sessions/:id/meta` | | frame count, sensor layout, state |
//! | `GET /sessions/:id/frames/:k` | | `{points: [{index,x,y}], circles}` |
//! | `POST /sessions/:id/frames/:k/circles` | `{"op": "add"\|"move"\|"resize"\|"delete", ..}` | `{person_id, circles}` |
//! | `POST /sessions/:id/track` | `?from=k&steps=n` plus optional tracking params | `{frames: [{frame, circles}]}` |
//! | `POST /sessions/:id/export` | `?format=json\|csv&path=..` | export text, or `{path}` when written |
//! | `POST /sessions/:id/save` | `?path=..` | `{path}` |
//! | `DELETE /sessions/:id` | | `{closed}` |
//!
//! A circle is `{person_id, x, y, radius, lost}`.

use super::{AnnotateError, CircleEdit, Session, SessionRegistry, TrackParams};
use crate::dataset::ExportFormat;
use crate::geometry::SensorMeta;
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::json;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

pub const API_VERSION: u32 = 1;

#[derive(Debug, Default)]
pub struct AppState {
    pub registry: SessionRegistry,
}

pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn bad_request(message: impl Into<String>) -> Self {
        Self {
            status: StatusCode::BAD_REQUEST,
            message: message.into(),
        }
    }
}

impl From<AnnotateError> for ApiError {
    fn from(e: AnnotateError) -> Self {
        let status = match &e {
            AnnotateError::UnknownSession(_) | AnnotateError::FrameOutOfRange { .. } | AnnotateError::UnknownCircle { .. } => {
                StatusCode::NOT_FOUND
            }
            _ => StatusCode::BAD_REQUEST,
        };
        Self {
            status,
            message: e.to_string(),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({"version": API_VERSION, "error": self.message}))).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CircleView {
    pub person_id: u32,
    pub x: f64,
    pub y: f64,
    pub radius: f64,
    pub lost: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointView {
    pub index: usize,
    pub x: f64,
    pub y: f64,
}

fn circle_views(s: &Session, frame: usize) -> Result<Vec<CircleView>, AnnotateError> {
    let state = s.frame(frame)?;
    Ok(state
        .circles
        .iter()
        .map(|(&id, c)| CircleView {
            person_id: id,
            x: c.x,
            y: c.y,
            radius: c.radius,
            lost: state.lost.contains(&id),
        })
        .collect())
}

#[derive(Debug, Deserialize)]
struct OpenRequest {
    dataset_path: PathBuf,
    #[serde(default)]
    resume: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpenResponse {
    pub version: u32,
    pub session_id: String,
    pub num_frames: usize,
}

async fn open_session(State(app): State<Arc<AppState>>, Json(req): Json<OpenRequest>) -> ApiResult<Json<OpenResponse>> {
    let handle = tokio::task::spawn_blocking(move || app.registry.open(&req.dataset_path, req.resume))
        .await
        .map_err(|e| ApiError::bad_request(e.to_string()))??;
    let s = handle.lock();
    Ok(Json(OpenResponse {
        version: API_VERSION,
        session_id: s.id.clone(),
        num_frames: s.num_frames(),
    }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaResponse {
    pub version: u32,
    pub session_id: String,
    pub dataset_path: PathBuf,
    pub num_frames: usize,
    pub current_frame: usize,
    pub dirty: bool,
    pub sensor: SensorMeta,
}

async fn meta(State(app): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Json<MetaResponse>> {
    let handle = app.registry.get(&id)?;
    let s = handle.lock();
    Ok(Json(MetaResponse {
        version: API_VERSION,
        session_id: s.id.clone(),
        dataset_path: s.dataset_path.clone(),
        num_frames: s.num_frames(),
        current_frame: s.current_frame,
        dirty: s.dirty,
        sensor: s.dataset.meta,
    }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameResponse {
    pub version: u32,
    pub frame: usize,
    pub timestamp: f64,
    pub points: Vec<PointView>,
    pub circles: Vec<CircleView>,
}

async fn frame(State(app): State<Arc<AppState>>, Path((id, k)): Path<(String, usize)>) -> ApiResult<Json<FrameResponse>> {
    let handle = app.registry.get(&id)?;
    let s = handle.lock();
    let scan = s.scan(k)?;
    Ok(Json(FrameResponse {
        version: API_VERSION,
        frame: k,
        timestamp: scan.timestamp,
        points: scan
            .valid_points()
            .into_iter()
            .map(|(index, p)| PointView { index, x: p.x, y: p.y })
            .collect(),
        circles: circle_views(&s, k)?,
    }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EditResponse {
    pub version: u32,
    pub frame: usize,
    pub person_id: u32,
    pub circles: Vec<CircleView>,
}

async fn edit(
    State(app): State<Arc<AppState>>,
    Path((id, k)): Path<(String, usize)>,
    Json(edit): Json<CircleEdit>,
) -> ApiResult<Json<EditResponse>> {
    let handle = app.registry.get(&id)?;
    let mut s = handle.lock();
    let person_id = s.edit(k, &edit)?;
    Ok(Json(EditResponse {
        version: API_VERSION,
        frame: k,
        person_id,
        circles: circle_views(&s, k)?,
    }))
}

#[derive(Debug, Deserialize)]
struct TrackQuery {
    from: usize,
    #[serde(default = "one")]
    steps: usize,
    search_inflation: Option<f64>,
    min_points: Option<usize>,
    max_jump: Option<f64>,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackedFrame {
    pub frame: usize,
    pub circles: Vec<CircleView>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackResponse {
    pub version: u32,
    pub params: TrackParams,
    pub frames: Vec<TrackedFrame>,
}

async fn track(
    State(app): State<Arc<AppState>>,
    Path(id): Path<String>,
    Query(q): Query<TrackQuery>,
) -> ApiResult<Json<TrackResponse>> {
    let d = TrackParams::default();
    let params = TrackParams {
        search_inflation: q.search_inflation.unwrap_or(d.search_inflation),
        min_points: q.min_points.unwrap_or(d.min_points),
        max_jump: q.max_jump.unwrap_or(d.max_jump),
    };
    params.validate()?;
    let handle = app.registry.get(&id)?;
    let mut s = handle.lock();
    let last = q.from.saturating_add(q.steps);
    if last >= s.num_frames() {
        return Err(AnnotateError::FrameOutOfRange {
            frame: last,
            len: s.num_frames(),
        }
        .into());
    }
    let mut frames = Vec::with_capacity(q.steps);
    for k in q.from..last {
        s.track_step(k, &params)?;
        frames.push(TrackedFrame {
            frame: k + 1,
            circles: circle_views(&s, k + 1)?,
        });
    }
    Ok(Json(TrackResponse {
        version: API_VERSION,
        params,
        frames,
    }))
}

#[derive(Debug, Deserialize)]
struct ExportQuery {
    format: String,
    path: Option<PathBuf>,
}

async fn export(
    State(app): State<Arc<AppState>>,
    Path(id): Path<String>,
    Query(q): Query<ExportQuery>,
) -> ApiResult<Response> {
    let format: ExportFormat = q.format.parse().map_err(|e: crate::dataset::DatasetError| ApiError::bad_request(e.to_string()))?;
    let handle = app.registry.get(&id)?;
    let text = handle.lock().export(format)?;
    if let Some(path) = q.path {
        std::fs::write(&path, &text).map_err(|e| ApiError {
            status: StatusCode::INTERNAL_SERVER_ERROR,
            message: format!("{}: {e}", path.display()),
        })?;
        return Ok(Json(json!({"version": API_VERSION, "path": path, "bytes": text.len()})).into_response());
    }
    let content_type = match format {
        ExportFormat::Json => "application/json",
        ExportFormat::Csv => "text/csv",
    };
    Ok(([(header::CONTENT_TYPE, content_type)], text).into_response())
}

#[derive(Debug, Deserialize)]
struct SaveQuery {
    path: Option<PathBuf>,
}

async fn save(State(app): State<Arc<AppState>>, Path(id): Path<String>, Query(q): Query<SaveQuery>) -> ApiResult<Json<serde_json::Value>> {
    let handle = app.registry.get(&id)?;
    let mut s = handle.lock();
    let path = q.path.unwrap_or_else(|| s.sidecar_path());
    s.save(&path).map_err(|e| ApiError {
        status: StatusCode::INTERNAL_SERVER_ERROR,
        message: e.to_string(),
    })?;
    Ok(Json(json!({"version": API_VERSION, "path": path})))
}

async fn close(State(app): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Json<serde_json::Value>> {
    app.registry.close(&id)?;
    Ok(Json(json!({"version": API_VERSION, "closed": id})))
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/sessions", post(open_session))
        .route("/sessions/:id", axum::routing::delete(close))
        .route("/sessions/:id/meta", get(meta))
        .route("/sessions/:id/frames/:k", get(frame))
        .route("/sessions/:id/frames/:k/circles", post(edit))
        .route("/sessions/:id/track", post(track))
        .route("/sessions/:id/export", post(export))
        .route("/sessions/:id/save", post(save))
        .with_state(state)
}

/// Serves the API until the process is stopped.
pub async fn serve(addr: SocketAddr, state: Arc<AppState>) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("annotation service listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state)).await
}
