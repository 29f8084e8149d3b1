//! HTTP API over a [`SharedEngine`].
//!
//! | route | success | errors |
//! |---|---|---|
//! | `POST /v1/sessions` | `{"session_id", "page_ids"}` | 400, 409, 502 |
//! | `POST /v1/research` | final context with trace | 400, 502 |
//! | `GET /v1/memory` | memo list | |
//! | `GET /v1/pages/{id}` | page | 400, 404 |
//! | `GET /healthz` | `ok` | |
//!
//! Model calls are blocking and run on the blocking pool. Reads work on the
//! latest committed snapshot and never wait for an ingest.

use std::collections::BTreeSet;
use std::path::PathBuf;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use gam_core::memorizer::MemorizeError;
use gam_core::researcher::{ResearchError, ResearchFailure};
use gam_core::{
    EngineError, ModelBackend, OutputFormat, PageId, Request, ResearchConfig, Session, SharedEngine,
};
use serde::Deserialize;
use serde_json::json;

use crate::config::parse_tools;

#[derive(Clone)]
pub struct AppState {
    pub engine: Arc<SharedEngine>,
    pub backend: Arc<dyn ModelBackend>,
    /// Every committed ingest is saved here before it becomes visible.
    pub store_path: Option<PathBuf>,
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/healthz", get(healthz))
        .route("/v1/sessions", post(post_session))
        .route("/v1/research", post(post_research))
        .route("/v1/memory", get(get_memory))
        .route("/v1/pages/{id}", get(get_page))
        .with_state(state)
}

struct ApiError {
    status: StatusCode,
    body: serde_json::Value,
}

impl ApiError {
    fn new(status: StatusCode, message: impl std::fmt::Display) -> Self {
        Self {
            status,
            body: json!({ "error": message.to_string() }),
        }
    }

    fn bad_request(message: impl std::fmt::Display) -> Self {
        Self::new(StatusCode::BAD_REQUEST, message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

fn parse_body<T: serde::de::DeserializeOwned>(body: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request(format!("malformed body: {e}")))
}

async fn healthz() -> &'static str {
    "ok"
}

async fn post_session(State(state): State<AppState>, body: Bytes) -> Result<Response, ApiError> {
    let session: Session = parse_body(&body)?;
    if session.content.trim().is_empty() {
        return Err(ApiError::bad_request("session content is empty"));
    }
    let id = session.id;
    let result = tokio::task::spawn_blocking(move || {
        state
            .engine
            .ingest(&session, &state.backend, state.store_path.as_deref())
    })
    .await
    .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e))?;
    match result {
        Ok(ids) => Ok(Json(json!({ "session_id": id, "page_ids": ids })).into_response()),
        Err(EngineError::Memorize(e)) => Err(match e {
            MemorizeError::OutOfOrderSession { .. } => ApiError::new(StatusCode::CONFLICT, e),
            MemorizeError::EmptySession(_) => ApiError::bad_request(e),
            MemorizeError::Backend(_) | MemorizeError::EmptyCompletion => {
                ApiError::new(StatusCode::BAD_GATEWAY, e)
            }
            _ => ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e),
        }),
        Err(e @ EngineError::WriterBusy) => Err(ApiError::new(StatusCode::CONFLICT, e)),
        Err(e) => Err(ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e)),
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ResearchBody {
    request: String,
    #[serde(default)]
    format: Option<String>,
    #[serde(default)]
    max_depth: Option<usize>,
    #[serde(default)]
    top_k: Option<usize>,
    #[serde(default)]
    tools: Option<Vec<String>>,
}

fn research_config(base: &ResearchConfig, body: &ResearchBody) -> Result<ResearchConfig, ApiError> {
    let mut config = base.clone();
    if let Some(f) = &body.format {
        config.output_format = f.parse::<OutputFormat>().map_err(ApiError::bad_request)?;
    }
    if let Some(d) = body.max_depth {
        config.max_reflection_depth = d;
    }
    if let Some(k) = body.top_k {
        if k == 0 {
            return Err(ApiError::bad_request("top_k must be at least 1"));
        }
        config.top_k = k;
    }
    if let Some(t) = &body.tools {
        let tools: BTreeSet<_> = parse_tools(t).map_err(ApiError::bad_request)?;
        config.enabled_tools = tools;
    }
    Ok(config)
}

async fn post_research(State(state): State<AppState>, body: Bytes) -> Result<Response, ApiError> {
    let body: ResearchBody = parse_body(&body)?;
    if body.request.trim().is_empty() {
        return Err(ApiError::bad_request("request is empty"));
    }
    let config = research_config(&state.engine.settings().research, &body)?;
    let request = Request::new(body.request);
    let result = tokio::task::spawn_blocking(move || {
        state.engine.research(&request, &state.backend, &config)
    })
    .await
    .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e))?;
    match result {
        Ok(out) => Ok(Json(out).into_response()),
        Err(ResearchFailure { error, trace }) => {
            let status = match error {
                ResearchError::Prompt(_) => StatusCode::INTERNAL_SERVER_ERROR,
                _ => StatusCode::BAD_GATEWAY,
            };
            Err(ApiError {
                status,
                body: json!({ "error": error.to_string(), "trace": trace }),
            })
        }
    }
}

async fn get_memory(State(state): State<AppState>) -> Response {
    Json(state.engine.snapshot().memory.memos().to_vec()).into_response()
}

async fn get_page(
    State(state): State<AppState>,
    Path(id): Path<String>,
) -> Result<Response, ApiError> {
    let id: usize = id
        .parse()
        .map_err(|_| ApiError::bad_request(format!("invalid page id `{id}`")))?;
    let snapshot = state.engine.snapshot();
    match snapshot.store.get(PageId(id)) {
        Some(page) => Ok(Json(page.as_ref().clone()).into_response()),
        None => Err(ApiError::new(
            StatusCode::NOT_FOUND,
            format!("no page {id}"),
        )),
    }
}

/// Serves `router(state)` on `addr` until the process is stopped.
pub async fn serve(state: AppState, addr: std::net::SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    eprintln!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state)).await
}
