//! Session HTTP/JSON API.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use clarifystl::clarification::{Phase, Pipeline, Requirement, Session, SessionError};
use clarifystl::dataset::to_lines;
use clarifystl::stl::render;
use serde::Deserialize;
use serde_json::{json, Value};

type Shared = Arc<Mutex<Session>>;

struct AppState {
    pipeline: Pipeline,
    sessions: Mutex<HashMap<String, Shared>>,
    next_id: AtomicU64,
}

impl AppState {
    fn lookup(&self, id: &str) -> Result<Shared, ApiError> {
        self.sessions
            .lock()
            .unwrap()
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::NotFound(id.to_string()))
    }
}

#[derive(Debug)]
enum ApiError {
    NotFound(String),
    Unprocessable(String),
    Conflict(String),
    Internal(String),
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, message) = match self {
            ApiError::NotFound(id) => (StatusCode::NOT_FOUND, format!("unknown session `{id}`")),
            ApiError::Unprocessable(m) => (StatusCode::UNPROCESSABLE_ENTITY, m),
            ApiError::Conflict(m) => (StatusCode::CONFLICT, m),
            ApiError::Internal(m) => (StatusCode::INTERNAL_SERVER_ERROR, m),
        };
        (status, Json(json!({ "error": message }))).into_response()
    }
}

#[derive(Deserialize)]
struct CreateBody {
    requirement: String,
}

#[derive(Deserialize)]
struct AnswerBody {
    answer: String,
}

/// Router serving every session endpoint. Sessions live in memory.
pub fn router(pipeline: Pipeline) -> Router {
    let state = Arc::new(AppState {
        pipeline,
        sessions: Mutex::new(HashMap::new()),
        next_id: AtomicU64::new(1),
    });
    Router::new()
        .route("/api/sessions", post(create))
        .route("/api/sessions/{id}", get(show))
        .route("/api/sessions/{id}/answer", post(answer))
        .route("/api/sessions/{id}/result", get(result))
        .route("/api/sessions/{id}/transcript", get(transcript))
        .with_state(state)
}

fn view(id: &str, session: &Session) -> Value {
    let state = session.state();
    json!({
        "session_id": id,
        "phase": state.phase,
        "iterations": state.iterations,
        "requirement": session.requirement().text,
        "original_requirement": session.requirement().original(),
        "revisions": session.requirement().revisions,
        "pending_query": session.pending_query().map(|q| q.text.clone()),
        "stl": session.formula().map(render),
        "error": session.error(),
        "transcript": session.transcript().summary(),
    })
}

/// Runs blocking session work off the async executor.
async fn blocking<T: Send + 'static>(
    work: impl FnOnce() -> T + Send + 'static,
) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(work)
        .await
        .map_err(|e| ApiError::Internal(e.to_string()))
}

async fn create(
    State(state): State<Arc<AppState>>,
    Json(body): Json<CreateBody>,
) -> Result<Response, ApiError> {
    if body.requirement.trim().is_empty() {
        return Err(ApiError::Unprocessable("empty requirement".into()));
    }
    let id = format!("s{}", state.next_id.fetch_add(1, Ordering::Relaxed));
    let worker = state.clone();
    let session_id = id.clone();
    let session = blocking(move || {
        worker
            .pipeline
            .start(Requirement::new(session_id, body.requirement))
    })
    .await?;
    let reply = json!({
        "session_id": id,
        "phase": session.phase(),
        "pending_query": session.pending_query().map(|q| q.text.clone()),
    });
    state
        .sessions
        .lock()
        .unwrap()
        .insert(id, Arc::new(Mutex::new(session)));
    Ok((StatusCode::CREATED, Json(reply)).into_response())
}

async fn show(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
) -> Result<Json<Value>, ApiError> {
    let session = state.lookup(&id)?;
    let session = session.lock().unwrap();
    Ok(Json(view(&id, &session)))
}

async fn answer(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    Json(body): Json<AnswerBody>,
) -> Result<Json<Value>, ApiError> {
    let session = state.lookup(&id)?;
    blocking(move || {
        let mut session = session.lock().unwrap();
        match session.answer(&body.answer) {
            Ok(()) => Ok(Json(view(&id, &session))),
            Err(SessionError::EmptyAnswer) => Err(ApiError::Unprocessable("empty answer".into())),
            Err(SessionError::NoPendingQuery) => Err(ApiError::Conflict("no pending query".into())),
        }
    })
    .await?
}

async fn result(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
) -> Result<Json<Value>, ApiError> {
    let session = state.lookup(&id)?;
    let session = session.lock().unwrap();
    match (session.phase(), session.formula()) {
        (Phase::Done, Some(formula)) => Ok(Json(
            json!({ "final_requirement": session.requirement().text, "stl": render(formula) }),
        )),
        (phase, _) => Err(ApiError::Conflict(format!("session is in phase {phase:?}"))),
    }
}

/// Transcript export, one event object per line.
async fn transcript(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
) -> Result<String, ApiError> {
    let session = state.lookup(&id)?;
    let events = session.lock().unwrap().transcript().events();
    Ok(to_lines(&events))
}
