//! Operator endpoint.
//!
//! The mission lives on one dedicated thread. HTTP handlers talk to it
//! only through [`MissionHandle`], a mailbox of requests answered over
//! oneshot channels, so the core never sees concurrent access. State
//! changes come exclusively from `POST /api/commands`, which goes through
//! the same framed, budget-charged path as any other uplink.
//!
//! | Method | Path | Response |
//! |---|---|---|
//! | GET | `/api/state` | JSON state snapshot |
//! | GET | `/api/assets/{id}/preview?segments=k` | PNG of the ground copy decoded from at most `k` segments |
//! | POST | `/api/commands` | JSON command outcome |
//! | GET | `/api/log?from=n` | event log lines from index `n`, plain text |
//! | GET | `/api/events` | server-sent events, one per log record |

use std::sync::mpsc as std_mpsc;
use std::time::{Duration, Instant};

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderName, HeaderValue, StatusCode};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::stream::{self, Stream};
use nanosat_core::mission::{
    Command, CommandError, CommandOutcome, EventRecord, Mission, Preview, PreviewError, StateSnapshot,
};
use nanosat_core::time::SimTime;
use serde::Deserialize;
use serde_json::json;
use tokio::sync::{broadcast, oneshot};

const EVENT_BUFFER: usize = 4096;

#[derive(Clone, Copy, Debug)]
pub struct ServeConfig {
    pub steps_per_tick: u32,
    /// `None` holds simulated time until [`MissionHandle::advance`].
    pub tick: Option<Duration>,
}

impl Default for ServeConfig {
    fn default() -> Self {
        ServeConfig { steps_per_tick: 6, tick: Some(Duration::from_millis(100)) }
    }
}

enum Request {
    State(oneshot::Sender<StateSnapshot>),
    Preview { asset_id: u64, segments: usize, reply: oneshot::Sender<Result<Preview, PreviewError>> },
    Command { command: Command, reply: oneshot::Sender<Result<CommandOutcome, CommandError>> },
    Log { from: usize, reply: oneshot::Sender<Vec<EventRecord>> },
    Advance { steps: u32, reply: oneshot::Sender<Result<SimTime, String>> },
}

#[derive(Debug, thiserror::Error)]
#[error("mission loop has stopped")]
pub struct Closed;

/// Cloneable mailbox address of the mission thread.
#[derive(Clone)]
pub struct MissionHandle {
    tx: std_mpsc::Sender<Request>,
    events: broadcast::Sender<(usize, EventRecord)>,
}

impl MissionHandle {
    /// Moves `mission` onto its own thread. The thread exits once every
    /// handle is dropped.
    pub fn spawn(mission: Mission, config: ServeConfig) -> Self {
        let (tx, rx) = std_mpsc::channel();
        let (events, _) = broadcast::channel(EVENT_BUFFER);
        let publisher = events.clone();
        std::thread::Builder::new()
            .name("mission".into())
            .spawn(move || mission_loop(mission, rx, publisher, config))
            .expect("spawn mission thread");
        MissionHandle { tx, events }
    }

    async fn ask<T>(&self, make: impl FnOnce(oneshot::Sender<T>) -> Request) -> Result<T, Closed> {
        let (reply, rx) = oneshot::channel();
        self.tx.send(make(reply)).map_err(|_| Closed)?;
        rx.await.map_err(|_| Closed)
    }

    pub async fn state(&self) -> Result<StateSnapshot, Closed> {
        self.ask(Request::State).await
    }

    pub async fn preview(&self, asset_id: u64, segments: usize) -> Result<Result<Preview, PreviewError>, Closed> {
        self.ask(|reply| Request::Preview { asset_id, segments, reply }).await
    }

    pub async fn submit(&self, command: Command) -> Result<Result<CommandOutcome, CommandError>, Closed> {
        self.ask(|reply| Request::Command { command, reply }).await
    }

    pub async fn log(&self, from: usize) -> Result<Vec<EventRecord>, Closed> {
        self.ask(|reply| Request::Log { from, reply }).await
    }

    /// Steps the simulation `steps` times and returns the new time.
    pub async fn advance(&self, steps: u32) -> Result<Result<SimTime, String>, Closed> {
        self.ask(|reply| Request::Advance { steps, reply }).await
    }

    /// Log records emitted from now on, with their index in the log.
    pub fn subscribe(&self) -> broadcast::Receiver<(usize, EventRecord)> {
        self.events.subscribe()
    }
}

fn step_n(m: &mut Mission, steps: u32) -> Result<SimTime, String> {
    for _ in 0..steps {
        if m.is_finished() {
            break;
        }
        m.step().map_err(|e| e.to_string())?;
    }
    Ok(m.time())
}

fn mission_loop(
    mut m: Mission,
    rx: std_mpsc::Receiver<Request>,
    events: broadcast::Sender<(usize, EventRecord)>,
    config: ServeConfig,
) {
    let mut published = m.events().len();
    let mut next_tick = config.tick.map(|d| Instant::now() + d);
    let mut halted = false;
    loop {
        let request = match next_tick {
            Some(at) if !halted && !m.is_finished() => {
                match rx.recv_timeout(at.saturating_duration_since(Instant::now())) {
                    Ok(r) => Some(r),
                    Err(std_mpsc::RecvTimeoutError::Timeout) => None,
                    Err(std_mpsc::RecvTimeoutError::Disconnected) => break,
                }
            }
            _ => match rx.recv() {
                Ok(r) => Some(r),
                Err(_) => break,
            },
        };
        match request {
            None => {
                if let Err(e) = step_n(&mut m, config.steps_per_tick) {
                    eprintln!("mission halted: {e}");
                    halted = true;
                }
                next_tick = config.tick.map(|d| Instant::now() + d);
            }
            Some(Request::State(reply)) => {
                let _ = reply.send(m.snapshot());
            }
            Some(Request::Preview { asset_id, segments, reply }) => {
                let _ = reply.send(m.preview(asset_id, segments));
            }
            Some(Request::Command { command, reply }) => {
                let _ = reply.send(m.submit(&command));
            }
            Some(Request::Log { from, reply }) => {
                let _ = reply.send(m.events().get(from..).unwrap_or_default().to_vec());
            }
            Some(Request::Advance { steps, reply }) => {
                let _ = reply.send(step_n(&mut m, steps));
            }
        }
        let all = m.events();
        for (i, e) in all.iter().enumerate().skip(published) {
            // No subscribers is not an error.
            let _ = events.send((i, e.clone()));
        }
        published = all.len();
    }
}

pub fn router(handle: MissionHandle) -> Router {
    Router::new()
        .route("/api/state", get(get_state))
        .route("/api/assets/{id}/preview", get(get_preview))
        .route("/api/commands", post(post_command))
        .route("/api/log", get(get_log))
        .route("/api/events", get(get_events))
        .with_state(handle)
}

pub async fn serve(mission: Mission, addr: std::net::SocketAddr, config: ServeConfig) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    eprintln!("serving on http://{}", listener.local_addr()?);
    axum::serve(listener, router(MissionHandle::spawn(mission, config))).await
}

fn error(status: StatusCode, kind: &str, reason: impl std::fmt::Display) -> Response {
    (status, Json(json!({ "error": kind, "reason": reason.to_string() }))).into_response()
}

fn unavailable(_: Closed) -> Response {
    error(StatusCode::SERVICE_UNAVAILABLE, "unavailable", Closed)
}

async fn get_state(State(h): State<MissionHandle>) -> Response {
    match h.state().await {
        Ok(s) => Json(s).into_response(),
        Err(e) => unavailable(e),
    }
}

#[derive(Deserialize)]
struct PreviewQuery {
    segments: Option<usize>,
}

const X_SEGMENTS_USED: HeaderName = HeaderName::from_static("x-segments-used");
const X_SEGMENT_COUNT: HeaderName = HeaderName::from_static("x-segment-count");
const X_GROUND_BYTES: HeaderName = HeaderName::from_static("x-ground-bytes");

async fn get_preview(State(h): State<MissionHandle>, Path(id): Path<u64>, Query(q): Query<PreviewQuery>) -> Response {
    let preview = match h.preview(id, q.segments.unwrap_or(usize::MAX)).await {
        Err(e) => return unavailable(e),
        Ok(Err(e @ PreviewError::UnknownAsset(_))) => return error(StatusCode::NOT_FOUND, "unknown_asset", e),
        Ok(Err(e @ PreviewError::InvalidSegments)) => return error(StatusCode::BAD_REQUEST, "invalid_segments", e),
        Ok(Err(e @ PreviewError::NoData)) => return error(StatusCode::CONFLICT, "no_data", e),
        Ok(Err(e @ PreviewError::Codec(_))) => return error(StatusCode::UNPROCESSABLE_ENTITY, "undecodable", e),
        Ok(Ok(p)) => p,
    };
    match crate::raster_io::to_png(&preview.image) {
        Ok(png) => (
            [
                (header::CONTENT_TYPE, HeaderValue::from_static("image/png")),
                (X_SEGMENTS_USED, HeaderValue::from(preview.segments_used)),
                (X_SEGMENT_COUNT, HeaderValue::from(preview.segment_count)),
                (X_GROUND_BYTES, HeaderValue::from(preview.ground_bytes)),
            ],
            png,
        )
            .into_response(),
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, "render", e),
    }
}

async fn post_command(State(h): State<MissionHandle>, body: Bytes) -> Response {
    let text = match std::str::from_utf8(&body) {
        Ok(t) => t,
        Err(e) => return error(StatusCode::BAD_REQUEST, "malformed", e),
    };
    let command = match Command::from_json(text) {
        Ok(c) => c,
        Err(e) => return error(StatusCode::BAD_REQUEST, "malformed", e),
    };
    match h.submit(command).await {
        Err(e) => unavailable(e),
        Ok(Ok(outcome)) => Json(outcome).into_response(),
        Ok(Err(e @ CommandError::Budget(_))) => error(StatusCode::TOO_MANY_REQUESTS, "budget_rejected", e),
        Ok(Err(e @ CommandError::UnknownAsset(_))) => error(StatusCode::NOT_FOUND, "unknown_asset", e),
        Ok(Err(e @ CommandError::Rejected(_))) => error(StatusCode::CONFLICT, "rejected", e),
        Ok(Err(e @ CommandError::Ended)) => error(StatusCode::GONE, "ended", e),
    }
}

#[derive(Deserialize)]
struct LogQuery {
    from: Option<usize>,
}

async fn get_log(State(h): State<MissionHandle>, Query(q): Query<LogQuery>) -> Response {
    match h.log(q.from.unwrap_or(0)).await {
        Ok(events) => {
            let text: String = events.iter().map(|e| e.to_line() + "\n").collect();
            ([(header::CONTENT_TYPE, "text/plain; charset=utf-8")], text).into_response()
        }
        Err(e) => unavailable(e),
    }
}

fn sse_event(index: usize, e: &EventRecord) -> Event {
    let details: serde_json::Map<String, serde_json::Value> =
        e.details.iter().map(|(k, v)| (k.clone(), serde_json::Value::String(v.clone()))).collect();
    Event::default()
        .id(index.to_string())
        .event(e.category.as_str())
        .data(json!({ "time": e.time, "category": e.category.as_str(), "details": details }).to_string())
}

async fn get_events(
    State(h): State<MissionHandle>,
) -> Sse<impl Stream<Item = Result<Event, std::convert::Infallible>>> {
    let rx = h.subscribe();
    let stream = stream::unfold(rx, |mut rx| async move {
        let ev = match rx.recv().await {
            Ok((i, e)) => sse_event(i, &e),
            Err(broadcast::error::RecvError::Lagged(n)) => Event::default().event("lagged").data(n.to_string()),
            Err(broadcast::error::RecvError::Closed) => return None,
        };
        Some((Ok(ev), rx))
    });
    Sse::new(stream).keep_alive(KeepAlive::default())
}
