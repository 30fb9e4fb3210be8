//! JSON-over-HTTP routes for [`SessionManager`].
//!
//! | method | path                     | body              |
//! |--------|--------------------------|-------------------|
//! | POST   | `/sessions`              | [`CreateRequest`] |
//! | GET    | `/sessions/{id}`         |                   |
//! | POST   | `/sessions/{id}/step`    |                   |
//! | POST   | `/sessions/{id}/help`    | [`HelpRequest`]   |
//! | POST   | `/sessions/{id}/answer`  | [`AnswerRequest`] |
//! | GET    | `/sessions/{id}/trace`   |                   |
//!
//! Session routes answer with a [`SessionView`]; `/trace` with a
//! [`SessionTrace`]. Errors are `{"error": <code>, "message": <text>, ...}`.

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde_json::json;
use tower_http::cors::CorsLayer;
use tower_http::services::ServeDir;

use crate::session::{
    AnswerRequest, CreateRequest, HelpRequest, SessionError, SessionManager, SessionTrace, SessionView,
};

impl IntoResponse for SessionError {
    fn into_response(self) -> Response {
        let message = self.to_string();
        let (status, body) = match &self {
            SessionError::NotFound(_) => (StatusCode::NOT_FOUND, json!({"error": "not_found"})),
            SessionError::UnknownEpisode(_) => (StatusCode::NOT_FOUND, json!({"error": "unknown_episode"})),
            SessionError::WrongPhase { expected, actual } => (
                StatusCode::CONFLICT,
                json!({"error": "wrong_phase", "expected": expected, "actual": actual}),
            ),
            SessionError::Busy => (StatusCode::CONFLICT, json!({"error": "busy"})),
            SessionError::Expired => (StatusCode::GONE, json!({"error": "expired"})),
            SessionError::Unrecognized { text, reason } => (
                StatusCode::UNPROCESSABLE_ENTITY,
                json!({"error": "unrecognized", "text": text, "reason": reason}),
            ),
            SessionError::KindMismatch { expected, got } => (
                StatusCode::UNPROCESSABLE_ENTITY,
                json!({"error": "kind_mismatch", "expected": expected, "got": got}),
            ),
            SessionError::BadRequest(_) => (StatusCode::BAD_REQUEST, json!({"error": "bad_request"})),
            SessionError::Internal(_) => (StatusCode::INTERNAL_SERVER_ERROR, json!({"error": "internal"})),
        };
        let mut body = body;
        body["message"] = message.into();
        (status, Json(body)).into_response()
    }
}

type Manager = Arc<SessionManager>;

/// Session work can run a builder process, so keep it off the async workers.
async fn blocking<T: Send + 'static>(
    f: impl FnOnce() -> Result<T, SessionError> + Send + 'static,
) -> Result<T, SessionError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| SessionError::Internal(e.to_string()))?
}

async fn create(
    State(m): State<Manager>,
    Json(request): Json<CreateRequest>,
) -> Result<(StatusCode, Json<SessionView>), SessionError> {
    let view = blocking(move || m.create(request)).await?;
    Ok((StatusCode::CREATED, Json(view)))
}

async fn show(State(m): State<Manager>, Path(id): Path<String>) -> Result<Json<SessionView>, SessionError> {
    blocking(move || m.get(&id)).await.map(Json)
}

async fn step(State(m): State<Manager>, Path(id): Path<String>) -> Result<Json<SessionView>, SessionError> {
    blocking(move || m.step(&id)).await.map(Json)
}

async fn help(
    State(m): State<Manager>,
    Path(id): Path<String>,
    Json(request): Json<HelpRequest>,
) -> Result<Json<SessionView>, SessionError> {
    blocking(move || m.provide_help(&id, request)).await.map(Json)
}

async fn answer(
    State(m): State<Manager>,
    Path(id): Path<String>,
    Json(request): Json<AnswerRequest>,
) -> Result<Json<SessionView>, SessionError> {
    blocking(move || m.answer(&id, request)).await.map(Json)
}

async fn trace(State(m): State<Manager>, Path(id): Path<String>) -> Result<Json<SessionTrace>, SessionError> {
    blocking(move || m.trace(&id)).await.map(Json)
}

/// All routes, with permissive CORS for a separately hosted web UI. Files in
/// `static_dir`, if given, are served for every other path.
pub fn router(manager: Arc<SessionManager>, static_dir: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/sessions", post(create))
        .route("/sessions/{id}", get(show))
        .route("/sessions/{id}/step", post(step))
        .route("/sessions/{id}/help", post(help))
        .route("/sessions/{id}/answer", post(answer))
        .route("/sessions/{id}/trace", get(trace))
        .with_state(manager);
    let app = match static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    };
    app.layer(CorsLayer::permissive())
}

/// Binds `addr` and serves until the process is stopped.
pub async fn serve(addr: SocketAddr, manager: Arc<SessionManager>, static_dir: Option<PathBuf>) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(manager, static_dir)).await
}
