//! Streaming HTTP service.
//!
//! `POST /v1/respond` answers with server-sent events named after the
//! session events; each `data` field is the event as JSON plus the session
//! id. `GET /v1/health` and `GET /v1/config` report status and settings.

use std::convert::Infallible;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::stream::{self, Stream};
use mulm_core::decoder::{ModelSession, SamplingPolicy, WordBudget};
use mulm_core::metrics::Clock;
use mulm_core::tokenizer::ChatTranscript;
use mulm_handoff::{run_collaborative, CollaborativeRequest, Continuator, RecoveryMode, SessionEvent};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tokio::sync::mpsc;

use crate::config::ServiceConfig;
use crate::engine::Engine;

#[derive(Clone)]
pub struct AppState {
    pub engine: Engine,
    pub continuator: Arc<dyn Continuator>,
    pub clock: Arc<dyn Clock>,
    pub config: Arc<ServiceConfig>,
    next_session: Arc<AtomicU64>,
}

impl AppState {
    pub fn new(engine: Engine, continuator: Arc<dyn Continuator>, clock: Arc<dyn Clock>, config: ServiceConfig) -> Self {
        Self {
            engine,
            continuator,
            clock,
            config: Arc::new(config),
            next_session: Arc::new(AtomicU64::new(1)),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RespondRequest {
    pub query: String,
    pub word_budget: Option<usize>,
    pub mode: Option<RecoveryMode>,
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/v1/respond", post(respond))
        .route("/v1/health", get(health))
        .route("/v1/config", get(config))
        .with_state(state)
}

fn bad_request(message: impl Into<String>) -> Response {
    (StatusCode::BAD_REQUEST, Json(json!({ "error": message.into() }))).into_response()
}

async fn health() -> Json<Value> {
    Json(json!({ "status": "ok" }))
}

async fn config(State(state): State<AppState>) -> Json<Value> {
    let c = &state.config;
    Json(json!({
        "model": state.engine.describe(),
        "word_budget": c.word_budget,
        "mode": c.mode,
        "max_tokens": c.max_tokens,
        "temperature": c.temperature,
        "cloud": {
            "base_url": c.cloud.base_url,
            "model": c.cloud.model,
            "timeout_ms": c.cloud.timeout_ms,
            "max_tokens": c.cloud.max_tokens,
        },
    }))
}

fn to_sse(session_id: u64, event: &SessionEvent) -> Event {
    let mut data = serde_json::to_value(event).unwrap_or_default();
    if let Some(obj) = data.as_object_mut() {
        obj.insert("session_id".into(), json!(session_id));
    }
    Event::default().event(event.name()).data(data.to_string())
}

async fn respond(
    State(state): State<AppState>,
    body: Result<Json<RespondRequest>, JsonRejection>,
) -> Response {
    let Json(req) = match body {
        Ok(b) => b,
        Err(e) => return bad_request(e.body_text()),
    };
    if req.query.trim().is_empty() {
        return bad_request("query must not be empty");
    }
    let budget = match WordBudget::new(req.word_budget.unwrap_or(state.config.word_budget)) {
        Ok(b) => b,
        Err(e) => return bad_request(e.to_string()),
    };
    let engine = state.engine.clone();
    let prompt_len = match engine.tokenizer.render_chat(&ChatTranscript::single(req.query.clone()), true) {
        Ok(p) => p.len(),
        Err(e) => return bad_request(e.to_string()),
    };
    let max = engine.model.config().max_seq_len;
    if prompt_len > max {
        return bad_request(format!("query needs {prompt_len} context positions, model has {max}"));
    }

    let request = CollaborativeRequest {
        query: req.query,
        word_budget: Some(budget),
        mode: req.mode.unwrap_or(state.config.mode),
        policy: SamplingPolicy {
            temperature: state.config.temperature,
            max_tokens: state.config.max_tokens,
        },
        adjudicated: None,
    };
    let session_id = state.next_session.fetch_add(1, Ordering::Relaxed);
    let (tx, rx) = mpsc::unbounded_channel::<Event>();
    let handle = tokio::runtime::Handle::current();
    tokio::task::spawn_blocking(move || {
        let mut lm = ModelSession::new(&engine.model);
        let mut rng = ChaCha8Rng::seed_from_u64(session_id);
        let events = tx.clone();
        let mut sink = move |e: SessionEvent| {
            // a closed receiver means the client went away
            let _ = events.send(to_sse(session_id, &e));
        };
        let result = handle.block_on(run_collaborative(
            &request,
            &mut lm,
            &engine.tokenizer,
            state.continuator.as_ref(),
            state.clock.as_ref(),
            &mut rng,
            &mut sink,
        ));
        if let Err(e) = result {
            tracing::error!(session_id, error = %e, "session failed before streaming");
            let _ = tx.send(to_sse(
                session_id,
                &SessionEvent::Error {
                    message: e.to_string(),
                    degraded: false,
                    t_ms: 0.0,
                },
            ));
        }
    });
    Sse::new(event_stream(rx)).keep_alive(KeepAlive::default()).into_response()
}

fn event_stream(rx: mpsc::UnboundedReceiver<Event>) -> impl Stream<Item = Result<Event, Infallible>> {
    stream::unfold(rx, |mut rx| async move { rx.recv().await.map(|e| (Ok(e), rx)) })
}

/// Binds and serves until interrupted.
pub async fn serve(state: AppState, listen: &str) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(listen).await?;
    tracing::info!(address = %listener.local_addr()?, "listening");
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
