//! HTTP API over a live simulation: run status, ledger queries, approvals,
//! kill switch, tiers, running metrics and a server-sent event stream.
//!
//! Every route requires `Authorization: Bearer <token>`; the event stream
//! also accepts `?token=` because browser EventSource cannot set headers.

use std::collections::VecDeque;
use std::convert::Infallible;
use std::sync::Arc;
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::{Path, Query, Request, State};
use axum::http::{HeaderMap, StatusCode};
use axum::middleware::{self, Next};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::Stream;
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tokio::sync::watch;

use pipekeeper_core::clock::SimTime;
use pipekeeper_core::decision::{Action, DecisionStage, Verdict};
use pipekeeper_core::ledger::{query, LedgerQuery};
use pipekeeper_core::orchestrator::{ApprovalError, ApprovalVerdict, Simulation};

pub const DEFAULT_PORT: u16 = 7377;
pub const TOKEN_ENV: &str = "PIPEKEEPER_TOKEN";
pub const OPENAPI: &str = include_str!("../openapi.yaml");

/// One item of the event stream. `id` is the position in the feed.
#[derive(Debug, Clone, Serialize)]
pub struct FeedItem {
    pub id: u64,
    pub event: String,
    pub data: Value,
}

struct Core {
    sim: Simulation,
    feed: Vec<FeedItem>,
    seen_events: usize,
    seen_telemetry: usize,
}

impl Core {
    /// Moves new run events and telemetry windows into the feed.
    fn sync(&mut self) {
        let events = &self.sim.events()[self.seen_events..];
        for e in events {
            let mut data = serde_json::to_value(e).expect("events serialize");
            let kind = data["type"].as_str().unwrap_or("event").to_string();
            data["tick"] = json!(e.tick);
            self.feed.push(FeedItem {
                id: self.feed.len() as u64,
                event: kind,
                data,
            });
        }
        self.seen_events += events.len();
        let windows = &self.sim.telemetry()[self.seen_telemetry..];
        for w in windows {
            self.feed.push(FeedItem {
                id: self.feed.len() as u64,
                event: "telemetry".into(),
                data: serde_json::to_value(w).expect("windows serialize"),
            });
        }
        self.seen_telemetry += windows.len();
    }
}

struct Shared {
    token: String,
    core: Mutex<Core>,
    notify: watch::Sender<usize>,
}

/// Cheap handle on the shared service state.
#[derive(Clone)]
pub struct AppState(Arc<Shared>);

impl AppState {
    pub fn new(sim: Simulation, token: impl Into<String>) -> Self {
        let mut core = Core {
            sim,
            feed: Vec::new(),
            seen_events: 0,
            seen_telemetry: 0,
        };
        core.sync();
        let (notify, _) = watch::channel(core.feed.len());
        AppState(Arc::new(Shared {
            token: token.into(),
            core: Mutex::new(core),
            notify,
        }))
    }

    /// Runs `f` against the simulation, then publishes whatever it emitted.
    pub fn with_sim<T>(&self, f: impl FnOnce(&mut Simulation) -> T) -> T {
        let mut core = self.0.core.lock();
        let out = f(&mut core.sim);
        core.sync();
        self.0.notify.send_replace(core.feed.len());
        out
    }

    /// Steps up to `ticks` ticks. Returns false once the run is finished.
    pub fn advance(&self, ticks: u64) -> anyhow::Result<bool> {
        self.with_sim(|sim| {
            for _ in 0..ticks {
                if sim.is_finished() {
                    break;
                }
                sim.step()?;
            }
            Ok(!sim.is_finished())
        })
    }

    pub fn feed_len(&self) -> usize {
        self.0.core.lock().feed.len()
    }
}

/// Advances the simulation one tick per `interval` until it finishes.
pub async fn drive(state: AppState, interval: Duration) -> anyhow::Result<()> {
    let mut timer = tokio::time::interval(interval.max(Duration::from_micros(1)));
    loop {
        timer.tick().await;
        if !state.advance(1)? {
            return Ok(());
        }
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        ApiError {
            status,
            code,
            message: message.into(),
        }
    }

    fn unprocessable(message: impl Into<String>) -> Self {
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_body", message)
    }

    fn internal(e: impl std::fmt::Display) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string())
    }
}

impl From<ApprovalError> for ApiError {
    fn from(e: ApprovalError) -> Self {
        let status = match e {
            ApprovalError::UnknownRequest(_) => StatusCode::NOT_FOUND,
            ApprovalError::AlreadyResolved(_) | ApprovalError::Expired(_) => StatusCode::CONFLICT,
            ApprovalError::InvalidOverride(_) => StatusCode::UNPROCESSABLE_ENTITY,
        };
        ApiError::new(status, e.code(), e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": self.code, "message": self.message }))).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

fn parse_body<T: serde::de::DeserializeOwned>(body: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::unprocessable(e.to_string()))
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/run", get(run_status))
        .route("/decisions", get(decisions))
        .route("/approvals/pending", get(pending))
        .route("/approvals/{id}", get(approval).post(answer))
        .route("/killswitch", post(killswitch))
        .route("/tier", get(tier))
        .route("/metrics", get(metrics))
        .route("/events", get(events))
        .route("/openapi.yaml", get(|| async { ([("content-type", "application/yaml")], OPENAPI) }))
        .layer(middleware::from_fn_with_state(state.clone(), auth))
        .with_state(state)
}

async fn auth(State(state): State<AppState>, req: Request, next: Next) -> Response {
    let expected = state.0.token.as_str();
    let header_ok = req
        .headers()
        .get("authorization")
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.strip_prefix("Bearer "))
        .is_some_and(|t| t == expected);
    let query_ok = req.uri().path() == "/events"
        && req
            .uri()
            .query()
            .is_some_and(|q| q.split('&').any(|kv| kv.strip_prefix("token=") == Some(expected)));
    if header_ok || query_ok {
        next.run(req).await
    } else {
        ApiError::new(StatusCode::UNAUTHORIZED, "unauthorized", "missing or wrong bearer token").into_response()
    }
}

async fn run_status(State(s): State<AppState>) -> ApiResult<pipekeeper_core::orchestrator::RunStatus> {
    Ok(Json(s.with_sim(|sim| sim.status())))
}

#[derive(Debug, Default, Deserialize)]
#[serde(default)]
pub struct DecisionsQuery {
    pub stage: Option<DecisionStage>,
    /// ALLOW, REQUIRE_APPROVAL or DENY, any case.
    pub outcome: Option<String>,
    pub overridden: Option<bool>,
    pub agent: Option<String>,
    pub trace: Option<String>,
    /// ISO-8601 simulated time, inclusive.
    pub from: Option<String>,
    /// ISO-8601 simulated time, exclusive.
    pub until: Option<String>,
    /// Include audit entries as well as decisions.
    pub audit: bool,
    /// Only entries with a larger sequence number.
    pub after: Option<u64>,
    pub limit: Option<usize>,
}

fn sim_time(s: &Option<String>, name: &str) -> Result<Option<SimTime>, ApiError> {
    s.as_deref()
        .map(|v| SimTime::parse_iso8601(v).ok_or_else(|| ApiError::unprocessable(format!("`{name}` is not an ISO-8601 time"))))
        .transpose()
}

async fn decisions(State(s): State<AppState>, Query(q): Query<DecisionsQuery>) -> ApiResult<Vec<Value>> {
    let lq = LedgerQuery {
        stage: q.stage,
        from: sim_time(&q.from, "from")?,
        until: sim_time(&q.until, "until")?,
        policy_outcome: q
            .outcome
            .as_deref()
            .map(|o| o.to_ascii_uppercase().parse::<Verdict>().map_err(ApiError::unprocessable))
            .transpose()?,
        human_overridden: q.overridden,
        agent_id: q.agent.clone(),
        trace_id: q.trace.clone(),
        decisions_only: !q.audit,
    };
    let core = s.0.core.lock();
    let mut out = Vec::new();
    for e in query(core.sim.ledger().entries(), &lq) {
        if q.after.is_some_and(|a| e.sequence <= a) {
            continue;
        }
        if q.limit.is_some_and(|l| out.len() >= l) {
            break;
        }
        let line = e.to_line().map_err(ApiError::internal)?;
        out.push(serde_json::from_str(&line).map_err(ApiError::internal)?);
    }
    Ok(Json(out))
}

async fn pending(State(s): State<AppState>) -> ApiResult<Vec<pipekeeper_core::orchestrator::ApprovalView>> {
    Ok(Json(s.with_sim(|sim| sim.pending_approvals())))
}

async fn approval(State(s): State<AppState>, Path(id): Path<String>) -> ApiResult<pipekeeper_core::orchestrator::ApprovalView> {
    s.with_sim(|sim| sim.approval(&id))
        .map(Json)
        .ok_or_else(|| ApprovalError::UnknownRequest(id).into())
}

/// `{"verdict": "approve" | "deny" | "override", "action": ..., "operator_id": ...}`
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ApprovalBody {
    verdict: String,
    #[serde(default)]
    action: Option<Action>,
    #[serde(default)]
    operator_id: Option<String>,
}

async fn answer(State(s): State<AppState>, Path(id): Path<String>, body: Bytes) -> ApiResult<pipekeeper_core::orchestrator::ApprovalView> {
    let b: ApprovalBody = parse_body(&body)?;
    let verdict = match (b.verdict.as_str(), b.action) {
        ("approve", None) => ApprovalVerdict::Approve,
        ("deny", None) => ApprovalVerdict::Deny,
        ("override", Some(a)) => ApprovalVerdict::Override(a),
        ("override", None) => return Err(ApiError::unprocessable("override needs an `action`")),
        ("approve" | "deny", Some(_)) => return Err(ApiError::unprocessable("`action` is only valid with override")),
        (other, _) => return Err(ApiError::unprocessable(format!("unknown verdict `{other}`"))),
    };
    let operator = b.operator_id.unwrap_or_else(|| "api".into());
    Ok(Json(s.with_sim(|sim| sim.submit_approval(&id, verdict, &operator))?))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct KillSwitchBody {
    action: KillSwitchAction,
    #[serde(default)]
    operator_id: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
enum KillSwitchAction {
    Engage,
    Release,
}

async fn killswitch(State(s): State<AppState>, body: Bytes) -> ApiResult<Value> {
    let b: KillSwitchBody = parse_body(&body)?;
    let operator = b.operator_id.unwrap_or_else(|| "api".into());
    let engage = b.action == KillSwitchAction::Engage;
    let (changed, tiers) = s
        .with_sim(|sim| sim.set_kill_switch(engage, &operator).map(|c| (c, sim.tiers())))
        .map_err(ApiError::internal)?;
    let mut v = serde_json::to_value(tiers).map_err(ApiError::internal)?;
    v["changed"] = json!(changed);
    Ok(Json(v))
}

async fn tier(State(s): State<AppState>) -> ApiResult<pipekeeper_core::orchestrator::TierView> {
    Ok(Json(s.with_sim(|sim| sim.tiers())))
}

async fn metrics(State(s): State<AppState>) -> ApiResult<Value> {
    let core = s.0.core.lock();
    let (dora, ai) = core.sim.metrics().map_err(ApiError::internal)?;
    let now = core.sim.now();
    Ok(Json(json!({
        "tick": now.minutes(),
        "now": now,
        "finished": core.sim.is_finished(),
        "dora": dora,
        "ai": ai,
    })))
}

#[derive(Debug, Default, Deserialize)]
#[serde(default)]
struct EventsQuery {
    /// Resume after this feed id.
    after: Option<u64>,
}

async fn events(
    State(s): State<AppState>,
    headers: HeaderMap,
    Query(q): Query<EventsQuery>,
) -> Sse<impl Stream<Item = Result<Event, Infallible>>> {
    let last = headers
        .get("last-event-id")
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.parse::<u64>().ok());
    let start = q.after.or(last).map_or(0, |id| id as usize + 1);
    let rx = s.0.notify.subscribe();
    let stream = futures::stream::unfold((s, start, rx, VecDeque::new()), |(s, mut cursor, mut rx, mut buf)| async move {
        loop {
            if let Some(item) = buf.pop_front() {
                return Some((Ok(sse_event(&item)), (s, cursor, rx, buf)));
            }
            {
                let core = s.0.core.lock();
                if cursor < core.feed.len() {
                    buf.extend(core.feed[cursor..].iter().cloned());
                    cursor = core.feed.len();
                }
            }
            if buf.is_empty() && rx.changed().await.is_err() {
                return None;
            }
        }
    });
    Sse::new(stream).keep_alive(KeepAlive::default())
}

fn sse_event(item: &FeedItem) -> Event {
    Event::default().id(item.id.to_string()).event(&item.event).data(item.data.to_string())
}
