//! HTTP API driven by the review web client.
//!
//! Record ids are relative paths, so clients percent-encode them (`/` as
//! `%2F`) inside `/api/record/{id}`.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::Utc;
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::net::TcpListener;
use tower_http::services::ServeDir;

use super::review::ReviewStats;
use super::{FlagKind, QaError, ReviewAction, ReviewDecision, ReviewSession};
use crate::manifest::{BoundingBox, ImageRecord};

pub struct ServerState {
    session: Mutex<ReviewSession>,
    ui_dir: Option<PathBuf>,
    /// Rewritten after every decision when set.
    state_path: Option<PathBuf>,
}

impl ServerState {
    pub fn new(session: ReviewSession) -> Self {
        Self {
            session: Mutex::new(session),
            ui_dir: None,
            state_path: None,
        }
    }

    pub fn with_ui_dir(mut self, dir: impl Into<PathBuf>) -> Self {
        self.ui_dir = Some(dir.into());
        self
    }

    pub fn with_state_path(mut self, path: impl Into<PathBuf>) -> Self {
        self.state_path = Some(path.into());
        self
    }

    pub fn session(&self) -> std::sync::MutexGuard<'_, ReviewSession> {
        self.session.lock().unwrap_or_else(|p| p.into_inner())
    }
}

#[derive(Debug, Deserialize)]
struct PageParams {
    offset: Option<usize>,
    limit: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueueItem {
    pub record_id: String,
    pub flags: Vec<FlagKind>,
    pub thumbnail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueuePage {
    pub total: usize,
    pub offset: usize,
    pub limit: usize,
    pub items: Vec<QueueItem>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct RecordView {
    pub record: ImageRecord,
    pub source_url: String,
    pub fg_url: Option<String>,
}

/// Body of `POST /api/record/{id}/decision`.
#[derive(Debug, Serialize, Deserialize)]
pub struct DecisionBody {
    pub action: ReviewAction,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manual_box: Option<BoundingBox>,
    pub reviewer: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct StatsView {
    pub overall: ReviewStats,
    pub datasets: BTreeMap<String, ReviewStats>,
}

struct ApiError(StatusCode, String);

impl From<QaError> for ApiError {
    fn from(e: QaError) -> Self {
        let status = match &e {
            QaError::NotFound(_) => StatusCode::NOT_FOUND,
            QaError::Conflict { .. } => StatusCode::CONFLICT,
            QaError::Invalid(_) | QaError::Manifest(_) => StatusCode::UNPROCESSABLE_ENTITY,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError(status, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(json!({ "error": self.1 }))).into_response()
    }
}

fn view(record: &ImageRecord) -> RecordView {
    RecordView {
        record: record.clone(),
        source_url: format!("/files/source/{}", record.source_path),
        fg_url: record.fg_path.as_ref().map(|p| format!("/files/fg/{p}")),
    }
}

async fn queue(State(state): State<Arc<ServerState>>, Query(p): Query<PageParams>) -> Json<QueuePage> {
    let session = state.session();
    let ids = session.queue();
    let offset = p.offset.unwrap_or(0);
    let limit = p.limit.unwrap_or(50).min(500);
    let items = ids
        .iter()
        .skip(offset)
        .take(limit)
        .filter_map(|id| session.record(id))
        .map(|r| QueueItem {
            record_id: r.record_id.clone(),
            flags: r.flags.iter().map(|f| f.kind).collect(),
            thumbnail: format!("/files/source/{}", r.source_path),
        })
        .collect();
    Json(QueuePage {
        total: ids.len(),
        offset,
        limit,
        items,
    })
}

async fn record(State(state): State<Arc<ServerState>>, Path(id): Path<String>) -> Result<Json<RecordView>, ApiError> {
    let session = state.session();
    let r = session.record(&id).ok_or_else(|| QaError::NotFound(id.clone()))?;
    Ok(Json(view(r)))
}

async fn decide(
    State(state): State<Arc<ServerState>>,
    Path(id): Path<String>,
    Json(body): Json<DecisionBody>,
) -> Result<Json<RecordView>, ApiError> {
    let decision = ReviewDecision {
        record_id: id,
        action: body.action,
        manual_box: body.manual_box,
        reviewer: body.reviewer,
        timestamp: Utc::now(),
    };
    // segmentation and image writes are blocking work
    tokio::task::spawn_blocking(move || {
        let mut session = state.session();
        let updated = view(session.decide(decision)?);
        if let Some(path) = &state.state_path {
            crate::manifest::save_manifest(session.manifest(), path).map_err(QaError::from)?;
        }
        Ok(Json(updated))
    })
    .await
    .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
}

async fn stats(State(state): State<Arc<ServerState>>) -> Json<StatsView> {
    let session = state.session();
    let s = session.stats();
    let mut datasets = BTreeMap::new();
    datasets.insert(session.manifest().name.clone(), s.clone());
    Json(StatsView { overall: s, datasets })
}

pub fn router(state: Arc<ServerState>) -> Router {
    let (source_root, out_root) = {
        let s = state.session();
        let roots = &s.context().roots;
        (roots.source_root.clone(), roots.out_root.clone())
    };
    let ui_dir = state.ui_dir.clone();
    let api = Router::new()
        .route("/api/queue", get(queue))
        .route("/api/record/{id}", get(record))
        .route("/api/record/{id}/decision", post(decide))
        .route("/api/stats", get(stats))
        .nest_service("/files/source", ServeDir::new(source_root))
        .nest_service("/files/fg", ServeDir::new(out_root))
        .with_state(state);
    match ui_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    }
}

pub async fn serve(listener: TcpListener, state: Arc<ServerState>) -> std::io::Result<()> {
    axum::serve(listener, router(state)).await
}
