//! HTTP/JSON front end.
//!
//! | method | path | body | reply |
//! |---|---|---|---|
//! | POST | `/sessions` | `{pools?, n_per_pool?, seed?}` | `{session_id, total}` |
//! | GET | `/sessions/{id}/next` | | `{item_id, image_url, index, total}` or `{done: true}` |
//! | POST | `/sessions/{id}/responses` | `{item_id, judged_source, judged_label}` | `{ok, answered, total, status}` |
//! | GET | `/sessions/{id}/report` | | report JSON |
//! | GET | `/images/{item_id}` | | PNG bytes |
//!
//! Errors reply `{error, message}` with a 4xx/5xx status.

use crate::engine::{PoolPaths, Source, TuringError};
use crate::service::SessionStore;
use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use braingan_core::dataset::Label;
use serde::Deserialize;
use serde_json::json;
use std::path::PathBuf;
use std::sync::Arc;
use tower_http::services::ServeDir;

pub const DEFAULT_N_PER_POOL: usize = 50;

impl IntoResponse for TuringError {
    fn into_response(self) -> Response {
        let (status, code) = match &self {
            TuringError::UnknownSession(_) => (StatusCode::NOT_FOUND, "unknown_session"),
            TuringError::UnknownItem(_) => (StatusCode::NOT_FOUND, "unknown_item"),
            TuringError::InsufficientPool { .. } => (StatusCode::UNPROCESSABLE_ENTITY, "insufficient_pool"),
            TuringError::OutOfOrder { .. } => (StatusCode::CONFLICT, "out_of_order"),
            TuringError::Duplicate(_) => (StatusCode::CONFLICT, "duplicate"),
            TuringError::SessionComplete => (StatusCode::CONFLICT, "session_complete"),
            TuringError::Invalid(_) => (StatusCode::BAD_REQUEST, "invalid_request"),
            TuringError::Storage(_) => (StatusCode::INTERNAL_SERVER_ERROR, "storage"),
        };
        (status, Json(json!({ "error": code, "message": self.to_string() }))).into_response()
    }
}

type AppResult<T> = Result<T, TuringError>;

/// Parses a JSON body ourselves so malformed input and unknown enum values
/// get the same error shape as every other failure.
fn parse<T: for<'de> Deserialize<'de>>(body: &Bytes) -> AppResult<T> {
    let body: &[u8] = if body.is_empty() { b"{}" } else { body };
    serde_json::from_slice(body).map_err(|e| TuringError::Invalid(e.to_string()))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CreateRequest {
    pools: Option<PoolPaths>,
    n_per_pool: Option<usize>,
    seed: Option<u64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ResponseRequest {
    item_id: String,
    judged_source: Source,
    judged_label: Label,
}

async fn create(State(store): State<Arc<SessionStore>>, body: Bytes) -> AppResult<impl IntoResponse> {
    let req: CreateRequest = parse(&body)?;
    let n = req.n_per_pool.unwrap_or(DEFAULT_N_PER_POOL);
    let seed = req.seed.unwrap_or_else(rand::random);
    let (session_id, total) = store.create(req.pools.as_ref(), n, seed)?;
    Ok((StatusCode::CREATED, Json(json!({ "session_id": session_id, "total": total }))))
}

async fn next(State(store): State<Arc<SessionStore>>, Path(id): Path<String>) -> AppResult<impl IntoResponse> {
    Ok(Json(store.next(&id)?))
}

async fn respond(
    State(store): State<Arc<SessionStore>>,
    Path(id): Path<String>,
    body: Bytes,
) -> AppResult<impl IntoResponse> {
    let req: ResponseRequest = parse(&body)?;
    Ok(Json(store.respond(&id, &req.item_id, req.judged_source, req.judged_label)?))
}

async fn report(State(store): State<Arc<SessionStore>>, Path(id): Path<String>) -> AppResult<impl IntoResponse> {
    Ok(Json(store.report(&id)?))
}

async fn image(State(store): State<Arc<SessionStore>>, Path(item_id): Path<String>) -> AppResult<impl IntoResponse> {
    let path = store.image_path(&item_id)?;
    let bytes = tokio::fs::read(&path)
        .await
        .map_err(|e| TuringError::Storage(format!("image for {item_id}: {e}")))?;
    Ok(([(header::CONTENT_TYPE, "image/png"), (header::CACHE_CONTROL, "no-store")], bytes))
}

/// Builds the API router; unmatched paths are served from `static_dir`
/// when one is given.
pub fn router(store: Arc<SessionStore>, static_dir: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/sessions", post(create))
        .route("/sessions/{id}/next", get(next))
        .route("/sessions/{id}/responses", post(respond))
        .route("/sessions/{id}/report", get(report))
        .route("/images/{item_id}", get(image))
        .with_state(store);
    match static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    }
}

/// Binds `addr` and serves until the process ends.
pub async fn serve(addr: &str, store: Arc<SessionStore>, static_dir: Option<PathBuf>) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("turing service listening on {}", listener.local_addr()?);
    axum::serve(listener, router(store, static_dir)).await
}
