//! HTTP JSON API and event stream. Each session runs in its own task that
//! owns the [`LiveSession`]; handlers talk to it through a command queue, so
//! submissions and timeouts are applied strictly in arrival order.

use std::collections::HashMap;
use std::convert::Infallible;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::sse::{Event as SseEvent, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::NaiveDate;
use equisel_core::agents::{RoundRecord, SessionConfig, SessionLog, Treatment};
use futures::Stream;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tokio::sync::{broadcast, mpsc, oneshot};
use tokio::time::Instant;

use crate::error::{Result, ServerError};
use crate::id::{parameter_code, SessionId};
use crate::session::{Feedback, LiveSession, Phase, RankEntry, SeatKind, StateView};

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(5);

#[derive(Clone, Debug)]
pub struct ServerConfig {
    pub round_timeout: Duration,
    pub allow_any_b: bool,
    /// Finished sessions are exported here.
    pub log_dir: Option<PathBuf>,
    pub server_code: u8,
    /// Date used in session ids; today (UTC) when unset.
    pub date: Option<NaiveDate>,
}

impl Default for ServerConfig {
    fn default() -> Self {
        ServerConfig {
            round_timeout: DEFAULT_TIMEOUT,
            allow_any_b: false,
            log_dir: None,
            server_code: 1,
            date: None,
        }
    }
}

/// Pushed to every subscriber of a session.
#[derive(Clone, Debug)]
pub enum Event {
    RoundOpen { t: u32, timeout_ms: u64 },
    RoundResult(Arc<RoundRecord>),
    Finished(Vec<RankEntry>),
}

impl Event {
    /// Wire form. With a seat, round results carry that seat's feedback;
    /// otherwise every seat's feedback is listed under `seats`.
    pub fn to_json(&self, seat: Option<usize>) -> Value {
        match self {
            Event::RoundOpen { t, timeout_ms } => {
                json!({"type": "round_open", "t": t, "timeout_ms": timeout_ms})
            }
            Event::RoundResult(rec) => match seat {
                Some(s) => json!({
                    "type": "round_result",
                    "t": rec.t,
                    "feedback": Feedback::for_seat(rec, s),
                }),
                None => json!({
                    "type": "round_result",
                    "t": rec.t,
                    "seats": (0..rec.choices.len()).map(|s| Feedback::for_seat(rec, s)).collect::<Vec<_>>(),
                }),
            },
            Event::Finished(ranking) => json!({"type": "finished", "ranking": ranking}),
        }
    }
}

enum Command {
    Join(String, oneshot::Sender<Result<StateView>>),
    FillBots(oneshot::Sender<Result<StateView>>),
    Submit(String, i64, oneshot::Sender<Result<StateView>>),
    View(Option<String>, oneshot::Sender<StateView>),
    Export(bool, oneshot::Sender<Result<SessionLog>>),
}

struct Actor {
    live: LiveSession,
    events: broadcast::Sender<Event>,
    timeout: Duration,
    log_dir: Option<PathBuf>,
    deadline: Option<Instant>,
    flushed: bool,
}

impl Actor {
    fn emit(&self, ev: Event) {
        // No subscribers is fine.
        let _ = self.events.send(ev);
    }

    /// Runs every transition that needs no further input.
    fn settle(&mut self) -> Result<()> {
        loop {
            match self.live.phase() {
                Phase::Lobby => return Ok(()),
                Phase::RoundOpen { t, .. } => {
                    if self.deadline.is_none() {
                        let t = *t;
                        self.deadline = Some(Instant::now() + self.timeout);
                        self.emit(Event::RoundOpen {
                            t,
                            timeout_ms: self.timeout.as_millis() as u64,
                        });
                    }
                    if !self.live.all_received() {
                        return Ok(());
                    }
                    let rec = Arc::new(self.live.resolve()?.clone());
                    self.close_round(rec)?;
                }
                Phase::RoundResolved { .. } => {
                    self.live.advance()?;
                }
                Phase::Finished => {
                    if !self.flushed {
                        self.flushed = true;
                        self.emit(Event::Finished(self.live.ranking().unwrap_or_default()));
                        self.flush();
                    }
                    return Ok(());
                }
            }
        }
    }

    fn close_round(&mut self, rec: Arc<RoundRecord>) -> Result<()> {
        self.deadline = None;
        self.emit(Event::RoundResult(rec));
        self.live.advance()?;
        Ok(())
    }

    fn fire_timeout(&mut self) -> Result<()> {
        let rec = Arc::new(self.live.timeout()?.clone());
        tracing::info!(session = self.live.id(), t = rec.t, seats = ?rec.timed_out, "round timed out");
        self.close_round(rec)?;
        self.settle()
    }

    fn flush(&self) {
        let Some(dir) = &self.log_dir else { return };
        let result = self.live.export(false).and_then(|log| {
            std::fs::create_dir_all(dir).map_err(equisel_core::Error::from)?;
            Ok(log.export(dir)?)
        });
        match result {
            Ok(()) => tracing::info!(session = self.live.id(), dir = %dir.display(), "log written"),
            Err(e) => tracing::error!(session = self.live.id(), error = %e, "log export failed"),
        }
    }

    fn handle(&mut self, cmd: Command) {
        match cmd {
            Command::Join(token, reply) => {
                let r = self.live.join(&token).and_then(|_| self.settle());
                let _ = reply.send(r.map(|_| self.live.view(Some(&token))));
            }
            Command::FillBots(reply) => {
                let r = self.live.fill_with_bots().and_then(|_| self.settle());
                let _ = reply.send(r.map(|_| self.live.view(None)));
            }
            Command::Submit(token, strategy, reply) => {
                let r = self.live.submit(&token, strategy).and_then(|_| self.settle());
                let _ = reply.send(r.map(|_| self.live.view(Some(&token))));
            }
            Command::View(token, reply) => {
                let _ = reply.send(self.live.view(token.as_deref()));
            }
            Command::Export(partial, reply) => {
                let _ = reply.send(self.live.export(partial));
            }
        }
    }

    async fn run(mut self, mut rx: mpsc::Receiver<Command>) {
        if let Err(e) = self.settle() {
            tracing::error!(session = self.live.id(), error = %e, "session failed to start");
        }
        loop {
            let deadline = self.deadline;
            tokio::select! {
                cmd = rx.recv() => match cmd {
                    Some(cmd) => self.handle(cmd),
                    None => break,
                },
                _ = tokio::time::sleep_until(deadline.unwrap_or_else(Instant::now)), if deadline.is_some() => {
                    if let Err(e) = self.fire_timeout() {
                        tracing::error!(session = self.live.id(), error = %e, "timeout resolution failed");
                    }
                }
            }
        }
    }
}

#[derive(Clone)]
struct Handle {
    commands: mpsc::Sender<Command>,
    events: broadcast::Sender<Event>,
}

impl Handle {
    async fn ask<T>(&self, make: impl FnOnce(oneshot::Sender<T>) -> Command) -> Result<T> {
        let (tx, rx) = oneshot::channel();
        self.commands.send(make(tx)).await.map_err(|_| ServerError::Closed)?;
        rx.await.map_err(|_| ServerError::Closed)
    }
}

/// Shared registry of running sessions.
#[derive(Clone)]
pub struct AppState {
    config: Arc<ServerConfig>,
    sessions: Arc<Mutex<HashMap<String, Handle>>>,
}

#[derive(Debug, Default, Deserialize)]
pub struct CreateRequest {
    #[serde(default)]
    pub config: SessionConfig,
    /// One entry per seat; all human when omitted.
    #[serde(default)]
    pub seats: Option<Vec<SeatKind>>,
}

#[derive(Debug, Serialize)]
pub struct Created {
    pub session_id: String,
    pub permutation: String,
    #[serde(flatten)]
    pub view: StateView,
}

impl AppState {
    pub fn new(config: ServerConfig) -> Self {
        AppState {
            config: Arc::new(config),
            sessions: Arc::default(),
        }
    }

    fn handle(&self, id: &str) -> Result<Handle> {
        self.sessions
            .lock()
            .expect("registry lock")
            .get(id)
            .cloned()
            .ok_or_else(|| ServerError::UnknownSession(id.to_owned()))
    }

    /// Validates, assigns an id and spawns the session task.
    pub async fn create(&self, req: CreateRequest) -> Result<Created> {
        let config = req.config;
        if !self.config.allow_any_b && Treatment::from_b(config.b).is_none() {
            return Err(ServerError::TreatmentNotAllowed(config.b));
        }
        config.validate(true)?;
        let plan = req
            .seats
            .unwrap_or_else(|| vec![SeatKind::Human; config.players as usize]);
        let date = self
            .config
            .date
            .unwrap_or_else(|| chrono::Utc::now().date_naive());
        let code = parameter_code(config.b);
        let permutation = config.permutation.code();

        let (tx, rx) = mpsc::channel(64);
        let (events, _) = broadcast::channel(1024);
        let id = {
            let mut sessions = self.sessions.lock().expect("registry lock");
            let index = sessions
                .keys()
                .filter_map(|k| k.parse::<SessionId>().ok())
                .filter(|s| (s.symbol, s.intensity) == code)
                .count() as u32;
            let id = (index..)
                .map(|k| SessionId::new(date, self.config.server_code, config.b, k).to_string())
                .find(|id| !sessions.contains_key(id))
                .expect("id space");
            let mut live = LiveSession::new(id.clone(), config, &plan)?;
            live.try_start()?;
            sessions.insert(
                id.clone(),
                Handle {
                    commands: tx,
                    events: events.clone(),
                },
            );
            let actor = Actor {
                live,
                events,
                timeout: self.config.round_timeout,
                log_dir: self.config.log_dir.clone(),
                deadline: None,
                flushed: false,
            };
            tokio::spawn(actor.run(rx));
            id
        };
        tracing::info!(session = %id, "session created");
        let view = self.view(&id, None).await?;
        Ok(Created {
            session_id: id,
            permutation,
            view,
        })
    }

    pub async fn join(&self, id: &str, token: String) -> Result<StateView> {
        self.handle(id)?.ask(|r| Command::Join(token, r)).await?
    }

    pub async fn fill_with_bots(&self, id: &str) -> Result<StateView> {
        self.handle(id)?.ask(Command::FillBots).await?
    }

    pub async fn submit(&self, id: &str, token: String, strategy: i64) -> Result<StateView> {
        self.handle(id)?.ask(|r| Command::Submit(token, strategy, r)).await?
    }

    pub async fn view(&self, id: &str, token: Option<String>) -> Result<StateView> {
        self.handle(id)?.ask(|r| Command::View(token, r)).await
    }

    pub async fn export(&self, id: &str, partial: bool) -> Result<SessionLog> {
        self.handle(id)?.ask(|r| Command::Export(partial, r)).await?
    }

    pub fn subscribe(&self, id: &str) -> Result<broadcast::Receiver<Event>> {
        Ok(self.handle(id)?.events.subscribe())
    }
}

impl ServerError {
    fn status(&self) -> StatusCode {
        use ServerError::*;
        match self {
            UnknownSession(_) => StatusCode::NOT_FOUND,
            UnknownToken(_) => StatusCode::FORBIDDEN,
            SessionFull | DuplicateToken(_) | SessionInProgress | WrongPhase(_) | DoubleSubmission | NotFinished => {
                StatusCode::CONFLICT
            }
            InvalidStrategy(_) | TreatmentNotAllowed(_) | SeatPlan { .. } | Core(_) => StatusCode::BAD_REQUEST,
            Closed => StatusCode::INTERNAL_SERVER_ERROR,
        }
    }

    fn kind(&self) -> &'static str {
        use ServerError::*;
        match self {
            UnknownSession(_) => "unknown_session",
            SessionFull => "session_full",
            DuplicateToken(_) => "duplicate_token",
            SessionInProgress => "session_in_progress",
            UnknownToken(_) => "unknown_token",
            WrongPhase(_) => "wrong_phase",
            InvalidStrategy(_) => "invalid_strategy",
            DoubleSubmission => "double_submission",
            TreatmentNotAllowed(_) => "treatment_not_allowed",
            SeatPlan { .. } => "seat_plan",
            NotFinished => "not_finished",
            Closed => "closed",
            Core(_) => "invalid_config",
        }
    }
}

impl IntoResponse for ServerError {
    fn into_response(self) -> Response {
        let body = json!({"error": self.kind(), "message": self.to_string()});
        (self.status(), Json(body)).into_response()
    }
}

#[derive(Deserialize)]
struct TokenBody {
    token: String,
}

#[derive(Deserialize)]
struct ChoiceBody {
    token: String,
    strategy: i64,
}

#[derive(Deserialize)]
struct TokenQuery {
    token: Option<String>,
}

#[derive(Deserialize)]
struct LogQuery {
    #[serde(default)]
    partial: bool,
}

async fn create(State(app): State<AppState>, Json(req): Json<CreateRequest>) -> Result<(StatusCode, Json<Created>)> {
    Ok((StatusCode::CREATED, Json(app.create(req).await?)))
}

async fn join(State(app): State<AppState>, Path(id): Path<String>, Json(b): Json<TokenBody>) -> Result<Json<StateView>> {
    Ok(Json(app.join(&id, b.token).await?))
}

async fn bots(State(app): State<AppState>, Path(id): Path<String>) -> Result<Json<StateView>> {
    Ok(Json(app.fill_with_bots(&id).await?))
}

async fn choice(State(app): State<AppState>, Path(id): Path<String>, Json(b): Json<ChoiceBody>) -> Result<Json<StateView>> {
    Ok(Json(app.submit(&id, b.token, b.strategy).await?))
}

async fn state(State(app): State<AppState>, Path(id): Path<String>, Query(q): Query<TokenQuery>) -> Result<Json<StateView>> {
    Ok(Json(app.view(&id, q.token).await?))
}

async fn log(State(app): State<AppState>, Path(id): Path<String>, Query(q): Query<LogQuery>) -> Result<Response> {
    let log = app.export(&id, q.partial).await?;
    Ok(([("content-type", "application/x-ndjson")], log.to_jsonl()).into_response())
}

async fn events(
    State(app): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<TokenQuery>,
) -> Result<Sse<impl Stream<Item = std::result::Result<SseEvent, Infallible>>>> {
    let rx = app.subscribe(&id)?;
    let seat = match q.token {
        Some(token) => Some(
            app.view(&id, Some(token.clone()))
                .await?
                .seat
                .ok_or(ServerError::UnknownToken(token))?,
        ),
        None => None,
    };
    let stream = futures::stream::unfold(rx, move |mut rx| async move {
        loop {
            match rx.recv().await {
                Ok(ev) => {
                    let data = ev.to_json(seat).to_string();
                    return Some((Ok(SseEvent::default().data(data)), rx));
                }
                Err(broadcast::error::RecvError::Lagged(n)) => {
                    tracing::warn!(skipped = n, "event subscriber lagging");
                }
                Err(broadcast::error::RecvError::Closed) => return None,
            }
        }
    });
    Ok(Sse::new(stream).keep_alive(KeepAlive::default()))
}

pub fn router(app: AppState) -> Router {
    Router::new()
        .route("/sessions", post(create))
        .route("/sessions/{id}/join", post(join))
        .route("/sessions/{id}/bots", post(bots))
        .route("/sessions/{id}/choice", post(choice))
        .route("/sessions/{id}/state", get(state))
        .route("/sessions/{id}/events", get(events))
        .route("/sessions/{id}/log", get(log))
        .with_state(app)
}

pub async fn serve(addr: std::net::SocketAddr, config: ServerConfig) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(%addr, "listening");
    axum::serve(listener, router(AppState::new(config))).await
}
