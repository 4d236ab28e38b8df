//! HTTP session service over the orchestration engine.
//!
//! Sessions live in memory. Turns of one session never interleave: a message
//! posted while another turn of the same session is running gets 409 unless
//! the service was built to queue instead.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, RwLock};

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use btaction_core::bt::TickTrace;
use btaction_core::domain::Utterance;
use btaction_core::llm::ChatBackend;
use btaction_core::orchestrator::{Attachment, Engine, ExecutedTask, ReplyKind, Session, SystemKind, TurnError};
use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use tokio::sync::Mutex;
use tower_http::services::ServeDir;
use uuid::Uuid;

/// What to do with a message for a session that is already mid-turn.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum BusyPolicy {
    #[default]
    Reject,
    Queue,
}

type SessionSlot = Arc<Mutex<Session>>;

#[derive(Clone)]
pub struct AppState {
    engine: Arc<Engine>,
    backend: Arc<dyn ChatBackend>,
    sessions: Arc<RwLock<HashMap<Uuid, SessionSlot>>>,
    busy: BusyPolicy,
}

impl AppState {
    pub fn new(engine: Engine, backend: Arc<dyn ChatBackend>) -> Self {
        Self {
            engine: Arc::new(engine),
            backend,
            sessions: Arc::default(),
            busy: BusyPolicy::default(),
        }
    }

    pub fn with_busy_policy(mut self, busy: BusyPolicy) -> Self {
        self.busy = busy;
        self
    }

    fn slot(&self, id: &str) -> Result<SessionSlot, ApiError> {
        let id = Uuid::parse_str(id).map_err(|_| ApiError::unknown_session(id))?;
        self.sessions
            .read()
            .expect("session map poisoned")
            .get(&id)
            .cloned()
            .ok_or_else(|| ApiError::unknown_session(&id.to_string()))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ErrorEnvelope {
    pub error: ErrorBody,
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            code,
            message: message.into(),
        }
    }

    fn unknown_session(id: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, "unknown_session", format!("no session '{id}'"))
    }

    fn bad_body(rejection: JsonRejection) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "invalid_body", rejection.body_text())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = ErrorEnvelope {
            error: ErrorBody {
                code: self.code.to_string(),
                message: self.message,
            },
        };
        (self.status, Json(body)).into_response()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CreateSession {
    pub system: SystemKind,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SessionHandle {
    pub id: Uuid,
    pub system: SystemKind,
    pub created_at: DateTime<Utc>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PostMessage {
    pub text: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MessageReply {
    pub reply: String,
    pub kind: ReplyKind,
    pub attachments: Option<Attachment>,
    pub turn_index: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SessionState {
    pub id: Uuid,
    pub system: SystemKind,
    pub created_at: DateTime<Utc>,
    pub pending: String,
    pub executed: Vec<ExecutedTask>,
    pub turn_count: usize,
    pub history: Vec<Utterance>,
}

impl SessionState {
    fn of(s: &Session) -> Self {
        Self {
            id: s.id,
            system: s.system,
            created_at: s.created_at,
            pending: s.pending.name().to_string(),
            executed: s.executed.clone(),
            turn_count: s.turns.len(),
            history: s.history.utterances().to_vec(),
        }
    }
}

async fn create_session(
    State(state): State<AppState>,
    body: Result<Json<CreateSession>, JsonRejection>,
) -> Result<(StatusCode, Json<SessionHandle>), ApiError> {
    let Json(req) = body.map_err(ApiError::bad_body)?;
    let session = state.engine.new_session(req.system);
    let handle = SessionHandle {
        id: session.id,
        system: session.system,
        created_at: session.created_at,
    };
    state
        .sessions
        .write()
        .expect("session map poisoned")
        .insert(session.id, Arc::new(Mutex::new(session)));
    tracing::info!(id = %handle.id, system = handle.system.name(), "session created");
    Ok((StatusCode::CREATED, Json(handle)))
}

async fn post_message(
    State(state): State<AppState>,
    Path(id): Path<String>,
    body: Result<Json<PostMessage>, JsonRejection>,
) -> Result<Json<MessageReply>, ApiError> {
    let slot = state.slot(&id)?;
    let Json(req) = body.map_err(ApiError::bad_body)?;
    if req.text.trim().is_empty() {
        return Err(ApiError::new(StatusCode::BAD_REQUEST, "empty_text", "message text is empty"));
    }
    let mut guard = match state.busy {
        BusyPolicy::Reject => slot.try_lock_owned().map_err(|_| {
            ApiError::new(StatusCode::CONFLICT, "turn_in_progress", "a turn of this session is still running")
        })?,
        BusyPolicy::Queue => slot.lock_owned().await,
    };
    let (engine, backend) = (state.engine.clone(), state.backend.clone());
    let result = tokio::task::spawn_blocking(move || {
        let reply = engine.run_turn(&mut guard, &req.text, backend.as_ref());
        reply.map(|r| (r, guard.turns.len() - 1))
    })
    .await
    .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "turn_failed", e.to_string()))?;
    match result {
        Ok((reply, turn_index)) => Ok(Json(MessageReply {
            reply: reply.text,
            kind: reply.kind,
            attachments: reply.attachments,
            turn_index,
        })),
        Err(TurnError::EmptyInstruction) => Err(ApiError::new(
            StatusCode::BAD_REQUEST,
            "empty_text",
            TurnError::EmptyInstruction.to_string(),
        )),
    }
}

async fn get_trace(State(state): State<AppState>, Path(id): Path<String>) -> Result<Json<Vec<TickTrace>>, ApiError> {
    let slot = state.slot(&id)?;
    let session = slot.lock().await;
    Ok(Json(session.traces().into_iter().cloned().collect()))
}

async fn get_state(State(state): State<AppState>, Path(id): Path<String>) -> Result<Json<SessionState>, ApiError> {
    let slot = state.slot(&id)?;
    let session = slot.lock().await;
    Ok(Json(SessionState::of(&session)))
}

/// The JSON API. Add the UI with [`with_ui`].
pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/v1/sessions", post(create_session))
        .route("/v1/sessions/{id}", get(get_state))
        .route("/v1/sessions/{id}/messages", post(post_message))
        .route("/v1/sessions/{id}/trace", get(get_trace))
        .with_state(state)
}

/// Serves static files from `dir` under /ui.
pub fn with_ui(router: Router, dir: PathBuf) -> Router {
    router.nest_service("/ui", ServeDir::new(dir))
}

/// Binds `addr` and serves until ctrl-c.
pub async fn serve(app: Router, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(addr = %listener.local_addr()?, "listening");
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
