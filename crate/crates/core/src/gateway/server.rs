//! HTTP API.
//!
//! | route | |
//! |---|---|
//! | `POST /v1/chat` | [`ProxyRequest`] in, [`ProxyResponse`] out; `regenerate_of` regenerates |
//! | `GET /v1/requests/{request_id}` | stored record |
//! | `GET /v1/sessions/{user_id}/{session_id}` | chronological records |
//! | `POST /v1/cache/documents` | `text/plain` body or multipart files, ingested into the cache |
//! | `GET /v1/health` | liveness and catalog summary |
//!
//! Errors are `{"error": {"kind": ..., "message": ...}}`.

use std::net::SocketAddr;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{FromRequest, Multipart, Path, Request, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Serialize;
use serde_json::json;
use tower_http::cors::CorsLayer;

use crate::error::Error;
use crate::model::MessageRecord;

use super::{Coordinator, ProxyRequest, ProxyResponse, SessionEntry};

#[derive(Clone)]
struct AppState {
    coordinator: Arc<Coordinator>,
    token: Option<Arc<str>>,
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    kind: &'static str,
    message: String,
}

pub fn status_for(e: &Error) -> StatusCode {
    match e {
        Error::BadRequest(_) | Error::Precondition(_) | Error::CatalogMiss(_) | Error::Filter(_) => {
            StatusCode::BAD_REQUEST
        }
        Error::ContextOverflow { .. } => StatusCode::PAYLOAD_TOO_LARGE,
        Error::NotFound(_) => StatusCode::NOT_FOUND,
        Error::QueueFull(_) => StatusCode::TOO_MANY_REQUESTS,
        Error::Transport { .. } | Error::Escalation { .. } | Error::JudgeFormat(_) => StatusCode::BAD_GATEWAY,
        _ => StatusCode::INTERNAL_SERVER_ERROR,
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        ApiError {
            status: status_for(&e),
            kind: e.kind(),
            message: e.to_string(),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = json!({"error": {"kind": self.kind, "message": self.message}});
        (self.status, Json(body)).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

pub fn router(coordinator: Arc<Coordinator>, token: Option<String>) -> Router {
    let state = AppState {
        coordinator,
        token: token.map(Into::into),
    };
    let api = Router::new()
        .route("/v1/chat", post(chat))
        .route("/v1/requests/:request_id", get(get_request))
        .route("/v1/sessions/:user_id/:session_id", get(get_session))
        .route("/v1/cache/documents", post(ingest))
        .route_layer(middleware::from_fn_with_state(state.clone(), require_token));
    Router::new()
        .route("/v1/health", get(health))
        .merge(api)
        .layer(CorsLayer::permissive())
        .with_state(state)
}

pub async fn serve(addr: SocketAddr, coordinator: Arc<Coordinator>, token: Option<String>) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(addr = %listener.local_addr()?, "listening");
    axum::serve(listener, router(coordinator, token))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}

async fn require_token(State(state): State<AppState>, headers: HeaderMap, req: Request, next: Next) -> Response {
    if let Some(expected) = &state.token {
        let given = headers
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "));
        if given != Some(expected.as_ref()) {
            return ApiError {
                status: StatusCode::UNAUTHORIZED,
                kind: "unauthorized",
                message: "missing or wrong bearer token".into(),
            }
            .into_response();
        }
    }
    next.run(req).await
}

async fn chat(State(state): State<AppState>, body: Bytes) -> Response {
    let req: ProxyRequest = match serde_json::from_slice(&body) {
        Ok(r) => r,
        Err(e) => return ApiError::from(Error::BadRequest(format!("request body: {e}"))).into_response(),
    };
    let pending = match state.coordinator.enqueue(req) {
        Ok(p) => p,
        Err(e) => return ApiError::from(e).into_response(),
    };
    // the response is fully rendered before the user's next request starts
    let mut rendered = None;
    let _ = pending
        .run_then(|result: &crate::error::Result<ProxyResponse>| {
            rendered = Some(match result {
                Ok(resp) => Json(resp).into_response(),
                Err(e) => ApiError {
                    status: status_for(e),
                    kind: e.kind(),
                    message: e.to_string(),
                }
                .into_response(),
            });
        })
        .await;
    rendered.expect("deliver is always called")
}

async fn get_request(State(state): State<AppState>, Path(request_id): Path<String>) -> ApiResult<MessageRecord> {
    Ok(Json(state.coordinator.get_request(&request_id)?))
}

#[derive(Serialize)]
struct SessionView {
    user_id: String,
    session_id: String,
    records: Vec<SessionEntry>,
}

async fn get_session(
    State(state): State<AppState>,
    Path((user_id, session_id)): Path<(String, String)>,
) -> ApiResult<SessionView> {
    let records = state.coordinator.session(&user_id, &session_id)?;
    Ok(Json(SessionView {
        user_id,
        session_id,
        records,
    }))
}

#[derive(Serialize)]
struct IngestReport {
    documents: usize,
    chunks: usize,
    degraded_chunks: usize,
    entry_ids: Vec<String>,
}

async fn ingest(State(state): State<AppState>, req: Request) -> ApiResult<IngestReport> {
    let content_type = req
        .headers()
        .get(header::CONTENT_TYPE)
        .and_then(|v| v.to_str().ok())
        .unwrap_or("text/plain")
        .to_ascii_lowercase();
    let mut documents = Vec::new();
    if content_type.starts_with("multipart/form-data") {
        let mut multipart = Multipart::from_request(req, &state)
            .await
            .map_err(|e| Error::BadRequest(format!("multipart body: {e}")))?;
        while let Some(field) = multipart
            .next_field()
            .await
            .map_err(|e| Error::BadRequest(format!("multipart field: {e}")))?
        {
            let text = field
                .text()
                .await
                .map_err(|e| Error::BadRequest(format!("multipart field: {e}")))?;
            documents.push(text);
        }
    } else {
        let bytes = Bytes::from_request(req, &state)
            .await
            .map_err(|e| Error::BadRequest(format!("body: {e}")))?;
        documents.push(String::from_utf8(bytes.to_vec()).map_err(|_| Error::BadRequest("body is not UTF-8".into()))?);
    }
    let documents: Vec<String> = documents.into_iter().filter(|d| !d.trim().is_empty()).collect();
    if documents.is_empty() {
        return Err(Error::Precondition("no non-empty document in request".into()).into());
    }
    let mut report = IngestReport {
        documents: documents.len(),
        chunks: 0,
        degraded_chunks: 0,
        entry_ids: Vec::new(),
    };
    for doc in &documents {
        let (out, _) = state.coordinator.ingest(doc).await?;
        report.chunks += out.chunks;
        report.degraded_chunks += out.degraded;
        report.entry_ids.extend(out.entry_ids);
    }
    Ok(Json(report))
}

async fn health(State(state): State<AppState>) -> Json<serde_json::Value> {
    let c = &state.coordinator;
    Json(json!({
        "status": "ok",
        "models": c.catalog().len(),
        "providers": c.catalog().providers(),
        "model_ids": c.catalog().models().map(|m| m.model_id.clone()).collect::<Vec<_>>(),
        "cache_entries": c.cache().len(),
    }))
}
