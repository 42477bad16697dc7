//! HTTP gateway. Frames are served as newline-delimited JSON on a long-lived
//! response; utterances are posted on a separate request.
//!
//! | method | path                              | success |
//! |--------|-----------------------------------|---------|
//! | GET    | `/health`                         | 200     |
//! | POST   | `/v1/sessions`                    | 201     |
//! | GET    | `/v1/sessions/{id}`               | 200     |
//! | POST   | `/v1/sessions/{id}/utterances`    | 202     |
//! | GET    | `/v1/sessions/{id}/events`        | 200     |
//! | GET    | `/v1/sessions/{id}/transcript`    | 200     |

use std::convert::Infallible;
use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use axum::body::{Body, Bytes};
use axum::extract::{Path as UrlPath, Query, Request, State};
use axum::http::{header, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use convfill::gateway::{FrameKind, GatewayError, GatewayOptions, SessionManager, PROTOCOL_VERSION};
use serde::Deserialize;
use serde_json::json;
use tokio_stream::wrappers::ReceiverStream;
use tower_http::services::ServeDir;

use crate::args::ServeArgs;
use crate::load_config;

#[derive(Clone)]
pub struct AppState {
    pub sessions: Arc<SessionManager>,
    /// Shared bearer token for `/v1` routes; open when `None`.
    pub token: Option<Arc<str>>,
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
}

impl ApiError {
    fn bad_request(message: impl Into<String>) -> Self {
        Self {
            status: StatusCode::BAD_REQUEST,
            code: "bad_request",
            message: message.into(),
        }
    }
}

impl From<GatewayError> for ApiError {
    fn from(e: GatewayError) -> Self {
        let (status, code) = match &e {
            GatewayError::SessionNotFound(_) => (StatusCode::NOT_FOUND, "session_not_found"),
            GatewayError::TurnInProgress(_) => (StatusCode::CONFLICT, "turn_in_progress"),
            GatewayError::EmptyUtterance => (StatusCode::BAD_REQUEST, "empty_utterance"),
            GatewayError::InvalidConfig(_) => (StatusCode::BAD_REQUEST, "invalid_config"),
        };
        Self {
            status,
            code,
            message: e.to_string(),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({"error": self.code, "message": self.message}))).into_response()
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct CreateSession {
    /// Dotted config keys, e.g. `{"silence.period_seconds": 0.5}`.
    #[serde(default)]
    overrides: serde_json::Map<String, serde_json::Value>,
}

#[derive(Debug, Deserialize)]
struct PostUtterance {
    text: String,
}

#[derive(Debug, Deserialize)]
struct EventsQuery {
    /// When false, the response ends after the next `turn_done`.
    #[serde(default = "yes")]
    follow: bool,
}

fn yes() -> bool {
    true
}

fn json_body<T: serde::de::DeserializeOwned + Default>(body: &Bytes) -> Result<T, ApiError> {
    if body.iter().all(u8::is_ascii_whitespace) {
        return Ok(T::default());
    }
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request(e.to_string()))
}

async fn health(State(st): State<AppState>) -> Json<serde_json::Value> {
    Json(json!({
        "status": "ok",
        "protocol_version": PROTOCOL_VERSION,
        "sessions": st.sessions.session_count(),
    }))
}

async fn create_session(State(st): State<AppState>, body: Bytes) -> Result<Response, ApiError> {
    let req: CreateSession = json_body(&body)?;
    let sessions = st.sessions.clone();
    let info = tokio::task::spawn_blocking(move || sessions.create_session(&req.overrides))
        .await
        .expect("session creation does not panic")?;
    Ok((StatusCode::CREATED, Json(info)).into_response())
}

async fn session_info(State(st): State<AppState>, UrlPath(id): UrlPath<String>) -> Result<Response, ApiError> {
    let info = st.sessions.session_info(&id)?;
    let active = st.sessions.is_active(&id)?;
    let turns = st.sessions.transcript(&id)?.turns().len();
    let mut v = serde_json::to_value(info).expect("session info serializes");
    v["active"] = json!(active);
    v["turns"] = json!(turns);
    Ok(Json(v).into_response())
}

async fn post_utterance(
    State(st): State<AppState>,
    UrlPath(id): UrlPath<String>,
    body: Bytes,
) -> Result<Response, ApiError> {
    let req: PostUtterance = serde_json::from_slice(&body).map_err(|e| ApiError::bad_request(e.to_string()))?;
    let turn_index = st.sessions.post_utterance(&id, &req.text)?;
    Ok((StatusCode::ACCEPTED, Json(json!({"session_id": id, "turn_index": turn_index}))).into_response())
}

async fn transcript(State(st): State<AppState>, UrlPath(id): UrlPath<String>) -> Result<Response, ApiError> {
    Ok(Json(st.sessions.transcript(&id)?).into_response())
}

async fn events(
    State(st): State<AppState>,
    UrlPath(id): UrlPath<String>,
    Query(q): Query<EventsQuery>,
) -> Result<Response, ApiError> {
    let sub = st.sessions.subscribe(&id)?;
    let (tx, rx) = tokio::sync::mpsc::channel::<Result<String, Infallible>>(64);
    tokio::task::spawn_blocking(move || loop {
        match sub.recv_timeout(Duration::from_millis(250)) {
            Ok(Some(frame)) => {
                let last = frame.kind == FrameKind::TurnDone && !q.follow;
                if tx.blocking_send(Ok(frame.to_ndjson())).is_err() || last {
                    break;
                }
            }
            Ok(None) => break,
            Err(()) if tx.is_closed() => break,
            Err(()) => {}
        }
    });
    Ok((
        [(header::CONTENT_TYPE, "application/x-ndjson"), (header::CACHE_CONTROL, "no-cache")],
        Body::from_stream(ReceiverStream::new(rx)),
    )
        .into_response())
}

async fn require_token(State(st): State<AppState>, req: Request, next: Next) -> Response {
    let Some(token) = &st.token else {
        return next.run(req).await;
    };
    let presented = req
        .headers()
        .get(header::AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.strip_prefix("Bearer "));
    if presented == Some(token.as_ref()) {
        next.run(req).await
    } else {
        ApiError {
            status: StatusCode::UNAUTHORIZED,
            code: "unauthorized",
            message: "missing or wrong bearer token".into(),
        }
        .into_response()
    }
}

pub fn router(state: AppState, static_dir: Option<&Path>) -> Router {
    let api = Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(session_info))
        .route("/sessions/{id}/utterances", post(post_utterance))
        .route("/sessions/{id}/events", get(events))
        .route("/sessions/{id}/transcript", get(transcript))
        .route_layer(middleware::from_fn_with_state(state.clone(), require_token));
    let app = Router::new().route("/health", get(health)).nest("/v1", api).with_state(state);
    match static_dir {
        Some(dir) => app.fallback_service(ServeDir::new(dir)),
        None => app,
    }
}

pub fn run(a: ServeArgs) -> anyhow::Result<()> {
    let cfg = load_config(a.config.as_deref(), &a.sets)?;
    let mut opts = GatewayOptions::new(cfg);
    if let Some(dir) = &a.persist_dir {
        std::fs::create_dir_all(dir)?;
        opts.persist_dir = Some(dir.clone());
    }
    let state = AppState {
        sessions: Arc::new(SessionManager::new(opts)),
        token: a.token.map(Into::into),
    };
    let app = router(state, a.static_dir.as_deref());
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(a.listen).await?;
        tracing::info!(addr = %listener.local_addr()?, "listening");
        eprintln!("listening on http://{}", listener.local_addr()?);
        axum::serve(listener, app)
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await?;
        anyhow::Ok(())
    })
}
