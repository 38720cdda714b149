//! HTTP API under `/v1`.
//!
//! | route          | body / query                         | reply                               |
//! |----------------|--------------------------------------|-------------------------------------|
//! | `POST /chat`   | `{session_id?, text}`                | response + `session_id`             |
//! | `GET /search`  | `q`, `k?`, threshold/strategy overrides | ranked fused candidates          |
//! | `POST /answer` | `{question}`                         | response                            |
//! | `GET /health`  |                                      | status and artifact checksums       |
//!
//! Responses carry `diagnostics` only when the server runs in debug mode.
//! Engine work runs on the blocking pool; loaded artifacts are never
//! mutated.

use std::collections::BTreeMap;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::rejection::QueryRejection;
use axum::extract::{Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use cordchat_core::answer::SystemResponse;
use cordchat_core::dialogue::{DialogueManager, SessionStore};
use cordchat_core::fusion::{FusedCandidate, RetrievalTrace, Strategy};
use cordchat_core::Error;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

pub struct AppState {
    manager: Option<DialogueManager>,
    sessions: SessionStore,
    debug: bool,
    checksums: BTreeMap<String, String>,
}

impl AppState {
    pub fn new(
        manager: DialogueManager,
        sessions: SessionStore,
        debug: bool,
        checksums: BTreeMap<String, String>,
    ) -> Self {
        Self {
            manager: Some(manager),
            sessions,
            debug,
            checksums,
        }
    }

    /// A server with no artifacts: every engine route answers 503.
    pub fn unloaded(sessions: SessionStore, debug: bool) -> Self {
        Self {
            manager: None,
            sessions,
            debug,
            checksums: BTreeMap::new(),
        }
    }

    pub fn sessions(&self) -> &SessionStore {
        &self.sessions
    }
}

type Shared = Arc<AppState>;

pub fn router(state: Shared) -> Router {
    Router::new()
        .route("/v1/chat", post(chat))
        .route("/v1/search", get(search))
        .route("/v1/answer", post(answer))
        .route("/v1/health", get(health))
        .with_state(state)
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
        }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, message)
    }

    fn unavailable() -> Self {
        Self::new(StatusCode::SERVICE_UNAVAILABLE, "artifacts not loaded")
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let status = match e {
            Error::InvalidInput(_) | Error::InvalidParameter(_) => StatusCode::BAD_REQUEST,
            Error::NotFound(_) => StatusCode::NOT_FOUND,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        Self::new(status, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": self.message }))).into_response()
    }
}

fn parse_body<T: DeserializeOwned>(body: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request(format!("malformed request body: {e}")))
}

fn manager(state: &AppState) -> Result<&DialogueManager, ApiError> {
    state.manager.as_ref().ok_or_else(ApiError::unavailable)
}

async fn blocking<T, F>(f: F) -> Result<T, ApiError>
where
    T: Send + 'static,
    F: FnOnce() -> Result<T, ApiError> + Send + 'static,
{
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, format!("worker failed: {e}")))?
}

fn render(response: SystemResponse, debug: bool) -> Value {
    let mut v = serde_json::to_value(response).expect("responses serialize");
    if !debug {
        if let Some(obj) = v.as_object_mut() {
            obj.remove("diagnostics");
        }
    }
    v
}

#[derive(Debug, Deserialize)]
struct ChatRequest {
    #[serde(default)]
    session_id: Option<String>,
    text: String,
}

async fn chat(State(state): State<Shared>, body: Bytes) -> Result<Json<Value>, ApiError> {
    let req: ChatRequest = parse_body(&body)?;
    manager(&state)?;
    if req.text.trim().is_empty() {
        return Err(ApiError::bad_request("text must not be empty"));
    }
    let session = match &req.session_id {
        Some(id) => state.sessions.get(id)?,
        None => state.sessions.create(),
    };
    let st = state.clone();
    let (session_id, response) = blocking(move || {
        let manager = manager(&st)?;
        let mut s = session.lock().unwrap_or_else(|p| p.into_inner());
        let now = st.sessions.now_ms();
        let response = manager.handle_turn(&mut s, &req.text, now)?;
        Ok((s.session_id.clone(), response))
    })
    .await?;
    let _ = state.sessions.touch(&session_id);
    let mut v = render(response, state.debug);
    v["session_id"] = Value::String(session_id);
    Ok(Json(v))
}

#[derive(Debug, Deserialize)]
struct SearchParams {
    q: String,
    k: Option<usize>,
    bm25_threshold: Option<f64>,
    cosine_threshold: Option<f64>,
    strategy: Option<String>,
}

#[derive(Debug, Serialize)]
struct SearchReply {
    candidates: Vec<FusedCandidate>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    warnings: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    trace: Option<RetrievalTrace>,
}

async fn search(
    State(state): State<Shared>,
    params: Result<Query<SearchParams>, QueryRejection>,
) -> Result<Json<SearchReply>, ApiError> {
    let Query(p) = params.map_err(|e| ApiError::bad_request(e.body_text()))?;
    let mut cfg = manager(&state)?.engine().fusion;
    if let Some(k) = p.k {
        cfg.top_k = k;
    }
    if let Some(t) = p.bm25_threshold {
        cfg.bm25_threshold = t;
    }
    if let Some(t) = p.cosine_threshold {
        cfg.cosine_threshold = t;
    }
    if let Some(s) = &p.strategy {
        cfg.strategy = s.parse::<Strategy>()?;
    }
    cfg.validate()?;
    let st = state.clone();
    let retrieval = blocking(move || Ok(manager(&st)?.engine().search(&p.q, &cfg)?)).await?;
    Ok(Json(SearchReply {
        candidates: retrieval.candidates,
        warnings: retrieval.warnings,
        trace: state.debug.then_some(retrieval.trace),
    }))
}

#[derive(Debug, Deserialize)]
struct AnswerRequest {
    question: String,
}

async fn answer(State(state): State<Shared>, body: Bytes) -> Result<Json<Value>, ApiError> {
    let req: AnswerRequest = parse_body(&body)?;
    manager(&state)?;
    if req.question.trim().is_empty() {
        return Err(ApiError::bad_request("question must not be empty"));
    }
    let st = state.clone();
    let response = blocking(move || Ok(manager(&st)?.engine().ask(&req.question)?)).await?;
    Ok(Json(render(response, state.debug)))
}

async fn health(State(state): State<Shared>) -> (StatusCode, Json<Value>) {
    match &state.manager {
        Some(m) => (
            StatusCode::OK,
            Json(json!({
                "status": "ok",
                "documents": m.engine().catalog().len(),
                "sessions": state.sessions.len(),
                "checksums": state.checksums,
            })),
        ),
        None => (
            StatusCode::SERVICE_UNAVAILABLE,
            Json(json!({ "status": "unavailable", "checksums": state.checksums })),
        ),
    }
}
