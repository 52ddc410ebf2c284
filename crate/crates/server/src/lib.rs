//! Curation HTTP API.
//!
//! | method | path               | body / query                              |
//! |--------|--------------------|-------------------------------------------|
//! | GET    | `/queue`           | `class`, `provider`, `language`, `limit`  |
//! | POST   | `/decisions`       | `CurationDecision` JSON                   |
//! | GET    | `/stats`           |                                           |
//! | GET    | `/blob/{checksum}` |                                           |
//!
//! Errors are `{"error": "..."}` with a 4xx/5xx status.

use std::net::SocketAddr;
use std::sync::Arc;

use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use roadwatch::curation::{self, CurationDecision, CurationError, QueueFilter};
use roadwatch::harvest::{is_checksum, BlobStore};
use roadwatch::manifest::ManifestStore;
use roadwatch::taxonomy::Taxonomy;
use serde::Deserialize;

pub const DEFAULT_LIMIT: usize = 20;
pub const MAX_LIMIT: usize = 500;

#[derive(Clone)]
pub struct AppState {
    pub store: Arc<ManifestStore>,
    pub blobs: Arc<BlobStore>,
    pub taxonomy: Arc<Taxonomy>,
}

impl AppState {
    pub fn new(store: ManifestStore, blobs: BlobStore, taxonomy: Taxonomy) -> Self {
        AppState {
            store: Arc::new(store),
            blobs: Arc::new(blobs),
            taxonomy: Arc::new(taxonomy),
        }
    }
}

pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        ApiError {
            status,
            message: message.into(),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(serde_json::json!({ "error": self.message }))).into_response()
    }
}

impl From<CurationError> for ApiError {
    fn from(e: CurationError) -> Self {
        let status = match &e {
            CurationError::UnknownRecord(_) => StatusCode::NOT_FOUND,
            CurationError::VersionConflict { .. } => StatusCode::CONFLICT,
            CurationError::Manifest(_) => StatusCode::INTERNAL_SERVER_ERROR,
            _ => StatusCode::UNPROCESSABLE_ENTITY,
        };
        ApiError::new(status, e.to_string())
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/queue", get(queue))
        .route("/decisions", post(decide))
        .route("/stats", get(stats))
        .route("/blob/{checksum}", get(blob))
        .with_state(state)
}

#[derive(Debug, Deserialize)]
struct QueueParams {
    class: Option<String>,
    provider: Option<String>,
    language: Option<String>,
    limit: Option<usize>,
}

fn parse_opt<T: std::str::FromStr>(name: &str, v: Option<&str>) -> Result<Option<T>, ApiError> {
    match v.filter(|s| !s.is_empty()) {
        None => Ok(None),
        Some(s) => s
            .parse()
            .map(Some)
            .map_err(|_| ApiError::new(StatusCode::BAD_REQUEST, format!("unknown {name} `{s}`"))),
    }
}

async fn queue(State(st): State<AppState>, Query(q): Query<QueueParams>) -> Result<Response, ApiError> {
    let filter = QueueFilter {
        class: parse_opt("class", q.class.as_deref())?,
        provider: parse_opt("provider", q.provider.as_deref())?,
        language: parse_opt("language", q.language.as_deref())?,
    };
    let limit = q.limit.unwrap_or(DEFAULT_LIMIT).min(MAX_LIMIT);
    let items = st.store.read(|m| curation::next_candidates(m, &filter, limit));
    Ok(Json(items).into_response())
}

async fn decide(State(st): State<AppState>, Json(d): Json<CurationDecision>) -> Result<Response, ApiError> {
    let record = tokio::task::spawn_blocking(move || curation::submit_decision(&st.store, &st.taxonomy, &d))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))??;
    Ok(Json(record).into_response())
}

async fn stats(State(st): State<AppState>) -> Response {
    Json(st.store.read(curation::curation_stats)).into_response()
}

/// Content type from the leading magic bytes.
pub fn sniff_content_type(bytes: &[u8]) -> &'static str {
    match bytes {
        [0x89, b'P', b'N', b'G', ..] => "image/png",
        [0xFF, 0xD8, 0xFF, ..] => "image/jpeg",
        [b'G', b'I', b'F', b'8', ..] => "image/gif",
        [b'R', b'I', b'F', b'F', _, _, _, _, b'W', b'E', b'B', b'P', ..] => "image/webp",
        _ => "application/octet-stream",
    }
}

async fn blob(State(st): State<AppState>, Path(checksum): Path<String>) -> Result<Response, ApiError> {
    if !is_checksum(&checksum) {
        return Err(ApiError::new(StatusCode::BAD_REQUEST, "not a sha-256 checksum"));
    }
    match st.blobs.get(&checksum) {
        Ok(bytes) => Ok((
            [
                (header::CONTENT_TYPE, sniff_content_type(&bytes)),
                (header::CACHE_CONTROL, "public, max-age=31536000, immutable"),
            ],
            bytes,
        )
            .into_response()),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            Err(ApiError::new(StatusCode::NOT_FOUND, format!("no blob {checksum}")))
        }
        Err(e) => Err(ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string())),
    }
}

/// Serves until the process is stopped.
pub async fn serve(addr: SocketAddr, state: AppState) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("curation service listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state)).await
}
