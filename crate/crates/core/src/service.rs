//! HTTP API over a [`Platform`].
//!
//! JSON in and out; errors are `{code, message, detail}`. Each handler takes
//! the platform lock for its whole duration, so mutations are serialized and
//! a losing concurrent request sees the winner's state (usually a 409).

use std::net::SocketAddr;
use std::sync::{Arc, Mutex, MutexGuard};

use axum::body::Bytes;
use axum::extract::{Path, Request, State};
use axum::http::{header, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::{DateTime, NaiveDate, Utc};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::analysis::AnalysisReport;
use crate::config::ServerConfig;
use crate::error::Error;
use crate::events::EventStore;
use crate::platform::Platform;
use crate::profiles::{ProfileAttributes, ProfileCard};
use crate::protocol::{Condition, DailySession, SessionState};
use crate::steps::StepSource;

pub type Clock = Arc<dyn Fn() -> DateTime<Utc> + Send + Sync>;

#[derive(Clone)]
pub struct AppState {
    platform: Arc<Mutex<Platform>>,
    token: Option<Arc<str>>,
    clock: Clock,
}

impl AppState {
    pub fn new(platform: Platform, token: Option<String>, clock: Clock) -> Self {
        Self { platform: Arc::new(Mutex::new(platform)), token: token.map(Into::into), clock }
    }

    /// Platform backed by `data_dir/events.jsonl`, replaying what is already there.
    pub fn open(config: &ServerConfig) -> crate::Result<Self> {
        let store = EventStore::open(&config.events_path())?;
        let platform = Platform::new(config.study.clone(), config.pool()?, store)?;
        Ok(Self::new(platform, config.token.clone(), Arc::new(Utc::now)))
    }

    fn lock(&self) -> Result<MutexGuard<'_, Platform>, ApiError> {
        self.platform.lock().map_err(|_| ApiError::internal("platform lock poisoned"))
    }

    fn now(&self) -> DateTime<Utc> {
        (self.clock)()
    }

    /// Run `f` against the platform, e.g. to inspect the log in tests.
    pub fn with_platform<T>(&self, f: impl FnOnce(&Platform) -> T) -> T {
        f(&self.platform.lock().expect("platform lock"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiError {
    #[serde(skip)]
    pub status: u16,
    pub code: String,
    pub message: String,
    pub detail: Value,
}

impl ApiError {
    fn new(status: StatusCode, code: &str, message: impl Into<String>, detail: Value) -> Self {
        Self { status: status.as_u16(), code: code.into(), message: message.into(), detail }
    }

    fn internal(message: &str) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "Internal", message, Value::Null)
    }

    fn validation(message: impl Into<String>) -> Self {
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, "Validation", message, Value::Null)
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let kind = error_kind(&e);
        let (status, code) = match e {
            Error::NotFound(_) => (StatusCode::NOT_FOUND, "NotFound"),
            Error::Conflict(_) => (StatusCode::CONFLICT, "Conflict"),
            Error::Sequencing(_) => (StatusCode::CONFLICT, "Sequencing"),
            Error::Validation(_) | Error::Domain(_) | Error::Enrollment(_) | Error::UndefinedCorrelation(_) => {
                (StatusCode::UNPROCESSABLE_ENTITY, "Validation")
            }
            Error::Config(_) | Error::Io(_) => (StatusCode::INTERNAL_SERVER_ERROR, "Internal"),
        };
        Self::new(status, code, message_of(&e), json!({ "kind": kind }))
    }
}

fn error_kind(e: &Error) -> &'static str {
    match e {
        Error::Domain(_) => "domain",
        Error::Validation(_) => "validation",
        Error::Sequencing(_) => "sequencing",
        Error::Conflict(_) => "conflict",
        Error::NotFound(_) => "not_found",
        Error::Enrollment(_) => "enrollment",
        Error::Config(_) => "config",
        Error::UndefinedCorrelation(_) => "undefined_correlation",
        Error::Io(_) => "io",
    }
}

fn message_of(e: &Error) -> String {
    match e {
        Error::Domain(m)
        | Error::Validation(m)
        | Error::Sequencing(m)
        | Error::Conflict(m)
        | Error::NotFound(m)
        | Error::Enrollment(m)
        | Error::Config(m)
        | Error::UndefinedCorrelation(m)
        | Error::Io(m) => m.clone(),
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        (status, Json(self)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

/// Body parsing with our error shape instead of axum's plain-text rejection.
fn parse<T: DeserializeOwned>(body: &Bytes) -> ApiResult<T> {
    serde_json::from_slice(body).map_err(|e| ApiError::validation(format!("invalid request body: {e}")))
}

fn likert(value: i64) -> ApiResult<u8> {
    u8::try_from(value).map_err(|_| ApiError::validation(format!("rating {value} outside 1..5")))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnrollRequest {
    pub external_id: String,
    pub gender: String,
    /// Enrollment date; the server's current date when omitted.
    #[serde(default)]
    pub date: Option<NaiveDate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnrollResponse {
    pub participant_id: String,
    pub condition: Condition,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepsRequest {
    pub date: NaiveDate,
    pub steps: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepsResponse {
    pub overwritten: Option<u32>,
    pub finalized: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StartSessionRequest {
    pub date: NaiveDate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StartSessionResponse {
    pub session_id: String,
    pub day_index: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatingRequest {
    pub value: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CardRequest {
    pub card_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnlockRequest {
    pub section: String,
}

/// What the card grid shows: a name and a step count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CardView {
    pub card_id: String,
    pub display_name: String,
    pub displayed_steps: u32,
}

impl From<&ProfileCard> for CardView {
    fn from(c: &ProfileCard) -> Self {
        Self { card_id: c.card_id.clone(), display_name: c.display_name.clone(), displayed_steps: c.displayed_steps }
    }
}

/// A card with its attributes; the offset stays server side.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileView {
    pub card_id: String,
    pub display_name: String,
    pub displayed_steps: u32,
    pub attributes: ProfileAttributes,
}

impl From<&ProfileCard> for ProfileView {
    fn from(c: &ProfileCard) -> Self {
        Self {
            card_id: c.card_id.clone(),
            display_name: c.display_name.clone(),
            displayed_steps: c.displayed_steps,
            attributes: c.attributes.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CardsResponse {
    pub session_id: String,
    /// The participant's own steps the cards are anchored to.
    pub reference_steps: u32,
    pub cards: Vec<CardView>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionView {
    pub session_id: String,
    pub participant_id: String,
    pub day_index: u32,
    pub date: NaiveDate,
    pub state: SessionState,
    pub pre_motivation: Option<u8>,
    pub post_motivation: Option<u8>,
    pub reference_steps: Option<u32>,
    pub cards: Vec<CardView>,
    pub selected: Option<ProfileView>,
    pub unlocked: Vec<String>,
}

impl From<&DailySession> for SessionView {
    fn from(s: &DailySession) -> Self {
        Self {
            session_id: s.session_id.clone(),
            participant_id: s.participant_id.clone(),
            day_index: s.day_index,
            date: s.date,
            state: s.state,
            pre_motivation: s.pre_motivation,
            post_motivation: s.post_motivation,
            reference_steps: (!s.cards.is_empty()).then_some(s.reference_steps),
            cards: s.cards.iter().map(CardView::from).collect(),
            selected: s.selected_card().map(ProfileView::from),
            unlocked: s.unlock_events.iter().map(|u| u.section.clone()).collect(),
        }
    }
}

async fn enroll(State(app): State<AppState>, body: Bytes) -> ApiResult<(StatusCode, Json<EnrollResponse>)> {
    let req: EnrollRequest = parse(&body)?;
    let now = app.now();
    let date = req.date.unwrap_or_else(|| now.date_naive());
    let (participant_id, condition) = app.lock()?.enroll(&req.external_id, &req.gender, date, now)?;
    Ok((StatusCode::CREATED, Json(EnrollResponse { participant_id, condition })))
}

async fn ingest(State(app): State<AppState>, Path(pid): Path<String>, body: Bytes) -> ApiResult<(StatusCode, Json<StepsResponse>)> {
    let req: StepsRequest = parse(&body)?;
    let now = app.now();
    let ack = app.lock()?.ingest_steps(&pid, req.date, req.steps, StepSource::Ingested, now)?;
    Ok((StatusCode::ACCEPTED, Json(StepsResponse { overwritten: ack.overwritten, finalized: ack.finalized })))
}

async fn start_session(
    State(app): State<AppState>,
    Path(pid): Path<String>,
    body: Bytes,
) -> ApiResult<(StatusCode, Json<StartSessionResponse>)> {
    let req: StartSessionRequest = parse(&body)?;
    let now = app.now();
    let mut platform = app.lock()?;
    // yesterday's session is finalized before today's arm is chosen
    platform.tick_participant(&pid, req.date, now)?;
    let session_id = platform.start_session(&pid, req.date, now)?;
    let day_index = platform.state().session(&session_id).map_or(0, |s| s.day_index);
    Ok((StatusCode::CREATED, Json(StartSessionResponse { session_id, day_index })))
}

async fn get_session(State(app): State<AppState>, Path(sid): Path<String>) -> ApiResult<Json<SessionView>> {
    let platform = app.lock()?;
    let s = platform.state().session(&sid).ok_or_else(|| Error::NotFound(format!("session `{sid}`")))?;
    Ok(Json(SessionView::from(s)))
}

async fn pre_motivation(State(app): State<AppState>, Path(sid): Path<String>, body: Bytes) -> ApiResult<Json<SessionView>> {
    let req: RatingRequest = parse(&body)?;
    let value = likert(req.value)?;
    let now = app.now();
    let mut platform = app.lock()?;
    Ok(Json(SessionView::from(platform.pre_motivation(&sid, value, now)?)))
}

async fn cards(State(app): State<AppState>, Path(sid): Path<String>) -> ApiResult<Json<CardsResponse>> {
    let now = app.now();
    let mut platform = app.lock()?;
    let s = platform.cards(&sid, now)?;
    Ok(Json(CardsResponse {
        session_id: s.session_id.clone(),
        reference_steps: s.reference_steps,
        cards: s.cards.iter().map(CardView::from).collect(),
    }))
}

async fn preview(State(app): State<AppState>, Path(sid): Path<String>, body: Bytes) -> ApiResult<Json<CardView>> {
    let req: CardRequest = parse(&body)?;
    let now = app.now();
    let card = app.lock()?.preview(&sid, &req.card_id, now)?;
    Ok(Json(CardView::from(&card)))
}

async fn select(State(app): State<AppState>, Path(sid): Path<String>, body: Bytes) -> ApiResult<Json<ProfileView>> {
    let req: CardRequest = parse(&body)?;
    let now = app.now();
    let card = app.lock()?.select(&sid, &req.card_id, now)?;
    Ok(Json(ProfileView::from(&card)))
}

async fn unlock(State(app): State<AppState>, Path(sid): Path<String>, body: Bytes) -> ApiResult<Json<SessionView>> {
    let req: UnlockRequest = parse(&body)?;
    let now = app.now();
    let mut platform = app.lock()?;
    Ok(Json(SessionView::from(platform.unlock(&sid, &req.section, now)?)))
}

async fn post_motivation(State(app): State<AppState>, Path(sid): Path<String>, body: Bytes) -> ApiResult<Json<SessionView>> {
    let req: RatingRequest = parse(&body)?;
    let value = likert(req.value)?;
    let now = app.now();
    let mut platform = app.lock()?;
    Ok(Json(SessionView::from(platform.post_motivation(&sid, value, now)?)))
}

async fn report(State(app): State<AppState>) -> ApiResult<Json<AnalysisReport>> {
    Ok(Json(app.lock()?.report(None)))
}

async fn auth(State(app): State<AppState>, request: Request, next: Next) -> Response {
    if let Some(token) = &app.token {
        let presented = request
            .headers()
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "));
        if presented != Some(token.as_ref()) {
            return ApiError::new(StatusCode::UNAUTHORIZED, "Unauthorized", "missing or invalid bearer token", Value::Null)
                .into_response();
        }
    }
    next.run(request).await
}

async fn not_found() -> ApiError {
    ApiError::new(StatusCode::NOT_FOUND, "NotFound", "no such route", Value::Null)
}

pub fn router(app: AppState) -> Router {
    Router::new()
        .route("/v1/participants", post(enroll))
        .route("/v1/participants/{pid}/steps", post(ingest))
        .route("/v1/participants/{pid}/sessions", post(start_session))
        .route("/v1/sessions/{sid}", get(get_session))
        .route("/v1/sessions/{sid}/motivation/pre", post(pre_motivation))
        .route("/v1/sessions/{sid}/cards", get(cards))
        .route("/v1/sessions/{sid}/preview", post(preview))
        .route("/v1/sessions/{sid}/select", post(select))
        .route("/v1/sessions/{sid}/unlock", post(unlock))
        .route("/v1/sessions/{sid}/motivation/post", post(post_motivation))
        .route("/v1/analysis/report", get(report))
        .fallback(not_found)
        .layer(middleware::from_fn_with_state(app.clone(), auth))
        .with_state(app)
}

/// Serve until Ctrl-C.
pub async fn serve(config: &ServerConfig) -> crate::Result<()> {
    let app = AppState::open(config)?;
    let addr = SocketAddr::from(([0, 0, 0, 0], config.port));
    let listener = tokio::net::TcpListener::bind(addr).await?;
    eprintln!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(app))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
