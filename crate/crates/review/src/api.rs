//! JSON API over a shared [`Session`].

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use axum::extract::{Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::json;
use tokio::sync::RwLock;
use tower_http::services::ServeDir;

use crate::session::{fit, Decision, DecisionOutcome, QueuePage, Session, SessionConfig, SessionError, SessionInfo, Stats};

pub const DEFAULT_QUEUE_LIMIT: usize = 20;

/// Shared server state. All mutations take the write lock, so they are
/// applied one at a time; reads share the lock.
#[derive(Clone)]
pub struct AppState {
    session: Arc<RwLock<Option<Session>>>,
    retraining: Arc<AtomicBool>,
}

impl AppState {
    pub fn new(session: Option<Session>) -> Self {
        AppState {
            session: Arc::new(RwLock::new(session)),
            retraining: Arc::new(AtomicBool::new(false)),
        }
    }

    /// Mark a retrain as running; `None` when one already is. The flag
    /// clears when the guard drops.
    pub fn try_begin_retrain(&self) -> Option<RetrainGuard> {
        self.retraining
            .compare_exchange(false, true, Ordering::SeqCst, Ordering::SeqCst)
            .ok()
            .map(|_| RetrainGuard(self.retraining.clone()))
    }

    pub async fn with_session<T>(&self, f: impl FnOnce(&Session) -> T) -> Option<T> {
        self.session.read().await.as_ref().map(f)
    }
}

impl IntoResponse for SessionError {
    fn into_response(self) -> Response {
        let status = match &self {
            SessionError::NoSession | SessionError::Busy => StatusCode::CONFLICT,
            SessionError::NotFound(_) => StatusCode::NOT_FOUND,
            SessionError::Invalid(_) => StatusCode::UNPROCESSABLE_ENTITY,
            SessionError::Core(_) | SessionError::Log { .. } | SessionError::Internal(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        (status, Json(json!({ "error": self.to_string() }))).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, SessionError>;

async fn read<T>(state: &AppState, f: impl FnOnce(&Session) -> T) -> ApiResult<T> {
    state.with_session(f).await.map(Json).ok_or(SessionError::NoSession)
}

async fn get_session(State(state): State<AppState>) -> ApiResult<SessionInfo> {
    read(&state, Session::info).await
}

#[derive(Debug, Deserialize)]
struct QueueParams {
    limit: Option<usize>,
}

async fn get_queue(State(state): State<AppState>, Query(params): Query<QueueParams>) -> ApiResult<QueuePage> {
    let limit = params.limit.unwrap_or(DEFAULT_QUEUE_LIMIT);
    read(&state, |s| s.queue_page(limit)).await
}

async fn get_metrics(State(state): State<AppState>) -> ApiResult<Stats> {
    read(&state, Session::stats).await
}

async fn post_decision(State(state): State<AppState>, Json(decision): Json<Decision>) -> ApiResult<DecisionOutcome> {
    let mut guard = state.session.write().await;
    let session = guard.as_mut().ok_or(SessionError::NoSession)?;
    session.submit(decision).map(Json)
}

/// Clears the busy flag however the retrain ends.
pub struct RetrainGuard(Arc<AtomicBool>);

impl Drop for RetrainGuard {
    fn drop(&mut self) {
        self.0.store(false, Ordering::SeqCst);
    }
}

async fn post_retrain(State(state): State<AppState>) -> ApiResult<Stats> {
    let inputs = state.with_session(Session::retrain_inputs).await.ok_or(SessionError::NoSession)?;
    let _busy = state.try_begin_retrain().ok_or(SessionError::Busy)?;
    let (dataset, spec, cincer) = inputs;
    // Train off the lock; decisions made meanwhile are honoured on install.
    let fitted = tokio::task::spawn_blocking(move || fit(&dataset, &spec, &cincer, &|_| false))
        .await
        .map_err(|e| SessionError::Internal(format!("retrain task failed: {e}")))??;
    let mut guard = state.session.write().await;
    let session = guard.as_mut().ok_or(SessionError::NoSession)?;
    session.install(fitted);
    Ok(Json(session.stats()))
}

pub fn router(state: AppState, static_dir: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/api/session", get(get_session))
        .route("/api/queue", get(get_queue))
        .route("/api/decision", post(post_decision))
        .route("/api/metrics", get(get_metrics))
        .route("/api/retrain", post(post_retrain))
        .with_state(state);
    match static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    }
}

/// Start a session from `cfg` and serve it until the process ends.
pub async fn serve(cfg: SessionConfig, addr: SocketAddr) -> Result<(), Box<dyn std::error::Error + Send + Sync>> {
    let static_dir = cfg.static_dir.clone();
    let session = tokio::task::spawn_blocking(move || Session::start(&cfg)).await??;
    let app = router(AppState::new(Some(session)), static_dir);
    let listener = tokio::net::TcpListener::bind(addr).await?;
    eprintln!("review session listening on http://{}", listener.local_addr()?);
    axum::serve(listener, app).await?;
    Ok(())
}
