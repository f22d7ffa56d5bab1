//! JSON API over an [`AnnotationStore`] plus static files for the UI bundle.

use std::net::SocketAddr;
use std::path::Path;
use std::sync::Arc;

use axum::extract::{Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::json;
use tower_http::services::ServeDir;

use super::{AnnotationError, AnnotationStore, LabelSubmission};
use crate::model::TargetKind;

type AppState = Arc<AnnotationStore>;

fn error(status: StatusCode, code: &str, message: String) -> Response {
    (status, Json(json!({ "error": code, "message": message }))).into_response()
}

fn parse_kind(kind: Option<&str>) -> Result<Option<TargetKind>, Box<Response>> {
    kind.map(str::parse)
        .transpose()
        .map_err(|e: String| Box::new(error(StatusCode::BAD_REQUEST, "bad_kind", e)))
}

#[derive(Deserialize)]
struct NextQuery {
    annotator: String,
    kind: Option<String>,
}

async fn next_task(State(store): State<AppState>, Query(q): Query<NextQuery>) -> Response {
    let kind = match parse_kind(q.kind.as_deref()) {
        Ok(k) => k,
        Err(r) => return *r,
    };
    match store.next_task(&q.annotator, kind) {
        Some(task) => Json(task).into_response(),
        None => StatusCode::NO_CONTENT.into_response(),
    }
}

async fn post_label(State(store): State<AppState>, Json(sub): Json<LabelSubmission>) -> Response {
    let result = tokio::task::spawn_blocking(move || store.record_label(sub, chrono::Utc::now())).await;
    match result {
        Ok(Ok(record)) => (StatusCode::CREATED, Json(record)).into_response(),
        Ok(Err(AnnotationError::UnknownTask(t))) => error(StatusCode::NOT_FOUND, "unknown_task", t),
        Ok(Err(AnnotationError::SchemaViolation(m))) => error(StatusCode::UNPROCESSABLE_ENTITY, "schema_violation", m),
        Ok(Err(e)) => error(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()),
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()),
    }
}

#[derive(Deserialize)]
struct StatsQuery {
    kind: String,
}

/// With no labels yet the body is `{"kind": .., "empty": true}` so the UI
/// can show an empty state.
async fn stats(State(store): State<AppState>, Query(q): Query<StatsQuery>) -> Response {
    let kind = match parse_kind(Some(&q.kind)) {
        Ok(Some(k)) => k,
        Ok(None) => unreachable!(),
        Err(r) => return *r,
    };
    match store.stats(kind) {
        Ok(s) => Json(s).into_response(),
        Err(AnnotationError::EmptyInput(_)) => Json(json!({ "kind": kind, "empty": true })).into_response(),
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()),
    }
}

async fn progress(State(store): State<AppState>) -> Response {
    Json(store.progress()).into_response()
}

async fn taxonomy(State(store): State<AppState>) -> Response {
    let mut schemas = serde_json::Map::new();
    for k in TargetKind::ALL {
        if let Some(t) = store.tasks().iter().find(|t| t.kind == k) {
            schemas.insert(k.as_str().into(), serde_json::to_value(&t.label_schema).unwrap());
        }
    }
    Json(schemas).into_response()
}

/// API routes; when `static_dir` is given, everything else is served from it.
pub fn router(store: Arc<AnnotationStore>, static_dir: Option<&Path>) -> Router {
    let api = Router::new()
        .route("/api/tasks/next", get(next_task))
        .route("/api/labels", post(post_label))
        .route("/api/stats", get(stats))
        .route("/api/progress", get(progress))
        .route("/api/taxonomy", get(taxonomy))
        .with_state(store);
    match static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    }
}

/// Binds `addr` and serves until the process ends. `on_bound` receives the
/// actual address, useful with port 0.
pub async fn serve(
    store: Arc<AnnotationStore>,
    addr: SocketAddr,
    static_dir: Option<&Path>,
    on_bound: impl FnOnce(SocketAddr),
) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    on_bound(listener.local_addr()?);
    axum::serve(listener, router(store, static_dir)).await
}
