//! The detection service: a persistent gallery behind an HTTP API.
//!
//! | method | path | success |
//! |---|---|---|
//! | POST | `/v1/sessions` | 201 `{session_id, flagged, usable, note?, flag?}` |
//! | GET | `/v1/queue?limit=K` | `{flags: [...]}` |
//! | GET | `/v1/sessions/{id}` | session metadata, availability, thumbnail ref |
//! | GET | `/v1/sessions/{id}/related?top_k=K` | `{candidates: [...]}` |
//! | POST | `/v1/flags/{id}/review` | updated flag; body `{verdict, note?}` |
//! | GET | `/v1/health` | `{status, model_version, method, threshold, gallery_size}` |
//!
//! Errors are `{code, message}` with codes `malformed_document`,
//! `negative_timestamp`, `unknown_event_kind`, `invalid_request`,
//! `duplicate_session` (409), `unknown_session` (404), `unknown_flag` (404),
//! `already_reviewed` (409), `unauthorized` (401) and `internal` (500).
//!
//! When a token is configured every route except health requires
//! `Authorization: Bearer <token>`.

use std::net::SocketAddr;
use std::path::Path;
use std::sync::{Arc, RwLock};

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Path as UrlPath, Query, Request, State};
use axum::http::{header, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use ringwatch_core::detect::{Detector, DetectorConfig, FlagRecord, FlagStatus, MatchCandidate, Verdict};
use ringwatch_core::methods::{Scorer, SessionScorer};
use ringwatch_core::session::{Demographics, DeviceContext};
use serde::{Deserialize, Serialize};

use crate::document::{parse_document, SessionDocument};
use crate::error::{DocumentError, Error};
use crate::store::{LogEvent, Store};

pub const DEFAULT_QUEUE_LIMIT: usize = 50;
pub const DEFAULT_TOP_K: usize = 8;
const MAX_BODY_BYTES: usize = 64 << 20;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnrollResponse {
    pub session_id: String,
    pub flagged: bool,
    pub usable: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub flag: Option<FlagRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Availability {
    pub keystroke: bool,
    pub mouse: bool,
    /// Whether the session was embedded and takes part in matching.
    pub scored: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionDetail {
    pub session_id: String,
    pub user_id: String,
    pub started_at_ms: i64,
    pub enrolled_at_ms: i64,
    pub device: DeviceContext,
    pub demographics: Demographics,
    pub thumbnail_ref: Option<String>,
    pub availability: Availability,
    pub note: Option<String>,
    pub flag_status: Option<FlagStatus>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub model_version: String,
    pub method: String,
    pub threshold: f64,
    pub gallery_size: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReviewRequest {
    pub verdict: String,
    #[serde(default)]
    pub note: Option<String>,
}

/// A detector whose every transition is written to a [`Store`] before the
/// call returns.
pub struct DetectService {
    detector: Detector<SessionScorer>,
    store: Store,
}

impl DetectService {
    pub fn open(scorer: SessionScorer, config: DetectorConfig, store_dir: &Path, snapshot_every: u64) -> Result<Self, Error> {
        let (store, state) = Store::open(store_dir, snapshot_every)?;
        let detector = Detector::from_state(scorer, config, state)?;
        Ok(Self { detector, store })
    }

    pub fn detector(&self) -> &Detector<SessionScorer> {
        &self.detector
    }

    pub fn enroll(&mut self, doc: SessionDocument, now_ms: i64) -> Result<EnrollResponse, Error> {
        let out = self.detector.enroll(&doc.session, doc.thumbnail_ref, now_ms)?;
        let entry = self.detector.entry(&out.session_id).expect("just enrolled").clone();
        let flag = self.detector.flag(&out.session_id).cloned();
        self.store.append(LogEvent::Enroll { entry, flag: flag.clone() }, self.detector.state())?;
        Ok(EnrollResponse { session_id: out.session_id, flagged: out.flagged, usable: out.usable, note: out.note, flag })
    }

    pub fn review(&mut self, session_id: &str, verdict: Verdict, note: Option<String>, now_ms: i64) -> Result<FlagRecord, Error> {
        let flag = self.detector.record_review(session_id, verdict, note, now_ms)?.clone();
        self.store.append(LogEvent::Review { flag: flag.clone() }, self.detector.state())?;
        Ok(flag)
    }

    pub fn detail(&self, session_id: &str) -> Option<SessionDetail> {
        let e = self.detector.entry(session_id)?;
        Some(SessionDetail {
            session_id: e.session_id.clone(),
            user_id: e.user_id.clone(),
            started_at_ms: e.started_at_ms,
            enrolled_at_ms: e.enrolled_at_ms,
            device: e.device.clone(),
            demographics: e.demographics,
            thumbnail_ref: e.thumbnail_ref.clone(),
            availability: Availability { keystroke: e.keystroke_available, mouse: e.mouse_available, scored: e.usable() },
            note: e.note.clone(),
            flag_status: self.detector.flag(session_id).map(|f| f.status),
        })
    }

    pub fn snapshot(&mut self) -> Result<(), Error> {
        self.store.snapshot(self.detector.state())
    }
}

pub type Clock = Arc<dyn Fn() -> i64 + Send + Sync>;

pub fn system_clock() -> Clock {
    Arc::new(|| {
        let d = std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH).unwrap_or_default();
        d.as_millis() as i64
    })
}

pub struct AppState {
    pub service: RwLock<DetectService>,
    pub token: Option<String>,
    pub model_version: String,
    pub clock: Clock,
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self { status, code, message: message.into() }
    }
}

#[derive(Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(ErrorBody { code: self.code.into(), message: self.message })).into_response()
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        use ringwatch_core::Error as C;
        let message = e.to_string();
        match e {
            Error::Core(C::DuplicateSessionId(_)) => ApiError::new(StatusCode::CONFLICT, "duplicate_session", message),
            Error::Core(C::UnknownSession(_)) => ApiError::new(StatusCode::NOT_FOUND, "unknown_session", message),
            Error::Core(C::UnknownFlag(_)) => ApiError::new(StatusCode::NOT_FOUND, "unknown_flag", message),
            Error::Core(C::AlreadyReviewed(_)) => ApiError::new(StatusCode::CONFLICT, "already_reviewed", message),
            _ => ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", message),
        }
    }
}

impl From<DocumentError> for ApiError {
    fn from(e: DocumentError) -> Self {
        let code = match e {
            DocumentError::NegativeTimestamp { .. } => "negative_timestamp",
            DocumentError::UnknownEventKind { .. } => "unknown_event_kind",
            DocumentError::Malformed(_) | DocumentError::DuplicateSessionId(_) => "malformed_document",
        };
        ApiError::new(StatusCode::BAD_REQUEST, code, e.to_string())
    }
}

fn poisoned() -> ApiError {
    ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", "service state lock poisoned")
}

type ApiResult<T> = Result<T, ApiError>;

async fn enroll(State(app): State<Arc<AppState>>, body: Bytes) -> ApiResult<(StatusCode, Json<EnrollResponse>)> {
    let doc = parse_document(&body)?;
    // feature extraction and the gallery scan are CPU-bound; the write lock
    // gives enrollments a single total order
    let out = tokio::task::spawn_blocking(move || {
        let now = (app.clock)();
        let mut svc = app.service.write().map_err(|_| poisoned())?;
        svc.enroll(doc, now).map_err(ApiError::from)
    })
    .await
    .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))??;
    Ok((StatusCode::CREATED, Json(out)))
}

#[derive(Deserialize)]
struct QueueQuery {
    limit: Option<usize>,
}

#[derive(Serialize, Deserialize)]
pub struct QueueResponse {
    pub flags: Vec<FlagRecord>,
}

async fn queue(State(app): State<Arc<AppState>>, Query(q): Query<QueueQuery>) -> ApiResult<Json<QueueResponse>> {
    let svc = app.service.read().map_err(|_| poisoned())?;
    let flags = svc.detector().pending_queue(q.limit.unwrap_or(DEFAULT_QUEUE_LIMIT)).into_iter().cloned().collect();
    Ok(Json(QueueResponse { flags }))
}

async fn session_detail(State(app): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> ApiResult<Json<SessionDetail>> {
    let svc = app.service.read().map_err(|_| poisoned())?;
    svc.detail(&id)
        .map(Json)
        .ok_or_else(|| ApiError::from(Error::Core(ringwatch_core::Error::UnknownSession(id))))
}

#[derive(Deserialize)]
struct RelatedQuery {
    top_k: Option<usize>,
}

#[derive(Serialize, Deserialize)]
pub struct RelatedResponse {
    pub candidates: Vec<MatchCandidate>,
}

async fn related(
    State(app): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    Query(q): Query<RelatedQuery>,
) -> ApiResult<Json<RelatedResponse>> {
    let svc = app.service.read().map_err(|_| poisoned())?;
    let candidates = svc.detector().find_related(&id, q.top_k.unwrap_or(DEFAULT_TOP_K)).map_err(Error::from)?;
    Ok(Json(RelatedResponse { candidates }))
}

async fn review(State(app): State<Arc<AppState>>, UrlPath(id): UrlPath<String>, body: Bytes) -> ApiResult<Json<FlagRecord>> {
    let req: ReviewRequest = serde_json::from_slice(&body)
        .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "invalid_request", e.to_string()))?;
    let verdict = Verdict::parse(&req.verdict).ok_or_else(|| {
        ApiError::new(StatusCode::BAD_REQUEST, "invalid_request", format!("verdict must be confirmed or cleared, got {:?}", req.verdict))
    })?;
    let now = (app.clock)();
    let mut svc = app.service.write().map_err(|_| poisoned())?;
    Ok(Json(svc.review(&id, verdict, req.note, now)?))
}

async fn health(State(app): State<Arc<AppState>>) -> ApiResult<Json<Health>> {
    let svc = app.service.read().map_err(|_| poisoned())?;
    let det = svc.detector();
    Ok(Json(Health {
        status: "ok".into(),
        model_version: app.model_version.clone(),
        method: det.scorer().method().as_str().into(),
        threshold: det.config().threshold,
        gallery_size: det.len(),
    }))
}

async fn require_token(State(app): State<Arc<AppState>>, req: Request, next: Next) -> Response {
    if let Some(token) = &app.token {
        let given = req.headers().get(header::AUTHORIZATION).and_then(|v| v.to_str().ok());
        if given.and_then(|v| v.strip_prefix("Bearer ")) != Some(token.as_str()) {
            return ApiError::new(StatusCode::UNAUTHORIZED, "unauthorized", "missing or wrong bearer token").into_response();
        }
    }
    next.run(req).await
}

pub fn router(app: Arc<AppState>) -> Router {
    let protected = Router::new()
        .route("/v1/sessions", post(enroll))
        .route("/v1/queue", get(queue))
        .route("/v1/sessions/{id}", get(session_detail))
        .route("/v1/sessions/{id}/related", get(related))
        .route("/v1/flags/{id}/review", post(review))
        .route_layer(middleware::from_fn_with_state(app.clone(), require_token));
    Router::new()
        .route("/v1/health", get(health))
        .merge(protected)
        .layer(DefaultBodyLimit::max(MAX_BODY_BYTES))
        .with_state(app)
}

/// Serves until ctrl-c, then writes a final snapshot.
pub async fn serve(addr: SocketAddr, app: Arc<AppState>) -> Result<(), Error> {
    let listener = tokio::net::TcpListener::bind(addr).await.map_err(|e| Error::Runtime(format!("bind {addr}: {e}")))?;
    eprintln!("listening on {}", listener.local_addr().map_err(|e| Error::Runtime(e.to_string()))?);
    axum::serve(listener, router(app.clone()))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(|e| Error::Runtime(e.to_string()))?;
    let mut svc = app.service.write().map_err(|_| Error::Runtime("service state lock poisoned".into()))?;
    svc.snapshot()
}
