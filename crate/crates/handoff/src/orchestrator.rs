//! One collaborative session: stream the opener, hand off, stream the
//! continuation.
//!
//! Events follow `opener_token+ handoff (continuation_token | correction)*
//! (done | error)`. Folding the text of `opener_token` and
//! `continuation_token` events in order yields the stitched response; the
//! first continuation token carries the stitch separator.

use mulm_core::decoder::{generate_opener, GenerationOptions, LanguageModel, OpenerResult, SamplingPolicy, StopReason, WordBudget};
use mulm_core::metrics::{compute_time_to_n_words, compute_ttft, Clock, CorrectionFlag, SessionTimeline};
use mulm_core::tokenizer::{ChatTranscript, TokenizerModel};
use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::client::Continuator;
use crate::error::CloudError;
use crate::prompts::{build_continuation_prompt, RecoveryMode};
use crate::stitch::{detect_correction, duplication_warning, separator, stitch, CORRECTION_MARKER};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum SessionEvent {
    OpenerToken {
        text: String,
        /// `None` only for the placeholder sent when the opener is empty.
        token_id: Option<u32>,
        t_ms: f64,
    },
    Handoff {
        opener: String,
        word_count: usize,
        stop_reason: StopReason,
        mode: RecoveryMode,
        t_ms: f64,
    },
    ContinuationToken {
        text: String,
        t_ms: f64,
    },
    Correction {
        t_ms: f64,
    },
    Done {
        stitched_text: String,
        metrics: SessionMetrics,
        t_ms: f64,
    },
    Error {
        message: String,
        /// The opener stays committed; the continuation is missing or partial.
        degraded: bool,
        t_ms: f64,
    },
}

impl SessionEvent {
    /// SSE event name.
    pub fn name(&self) -> &'static str {
        match self {
            Self::OpenerToken { .. } => "opener_token",
            Self::Handoff { .. } => "handoff",
            Self::ContinuationToken { .. } => "continuation_token",
            Self::Correction { .. } => "correction",
            Self::Done { .. } => "done",
            Self::Error { .. } => "error",
        }
    }

    /// Text this event appends to the visible response.
    pub fn visible_text(&self) -> &str {
        match self {
            Self::OpenerToken { text, .. } | Self::ContinuationToken { text, .. } => text,
            _ => "",
        }
    }
}

/// Checks the per-session event grammar.
pub fn check_event_grammar<'a>(names: impl IntoIterator<Item = &'a str>) -> Result<(), String> {
    #[derive(PartialEq)]
    enum State {
        Start,
        Opener,
        Continuation,
        Closed,
    }
    let mut state = State::Start;
    for (i, name) in names.into_iter().enumerate() {
        state = match (state, name) {
            (State::Start | State::Opener, "opener_token") => State::Opener,
            (State::Opener, "handoff") => State::Continuation,
            (State::Continuation, "continuation_token" | "correction") => State::Continuation,
            (State::Continuation, "done" | "error") => State::Closed,
            (_, other) => return Err(format!("event {i} ({other}) is out of order")),
        };
    }
    if state == State::Closed {
        Ok(())
    } else {
        Err("stream ended before done or error".into())
    }
}

/// The visible response, as a client folding the stream would render it.
pub fn render_events(events: &[SessionEvent]) -> String {
    events.iter().map(SessionEvent::visible_text).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollaborativeRequest {
    pub query: String,
    pub word_budget: Option<WordBudget>,
    pub mode: RecoveryMode,
    pub policy: SamplingPolicy,
    /// Correction verdict from an external judge, for modes without a marker.
    pub adjudicated: Option<bool>,
}

impl CollaborativeRequest {
    pub fn new(query: impl Into<String>, word_budget: usize, mode: RecoveryMode) -> mulm_core::Result<Self> {
        Ok(Self {
            query: query.into(),
            word_budget: Some(WordBudget::new(word_budget)?),
            mode,
            policy: SamplingPolicy::default(),
            adjudicated: None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContinuationResult {
    pub continuation_text: String,
    pub stitched_text: String,
    pub corrected: CorrectionFlag,
    pub ttfb_cloud_ms: Option<f64>,
    pub tokens_received: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionMetrics {
    pub ttft_ms: Option<f64>,
    pub time_to_budget_ms: Option<f64>,
    pub prefill_ms: f64,
    pub prompt_tokens: usize,
    pub opener_tokens: usize,
    pub opener_words: usize,
    /// Handoff dispatch relative to the request.
    pub handoff_ms: f64,
    /// First continuation byte relative to the handoff.
    pub cloud_ttfb_ms: Option<f64>,
    pub total_ms: f64,
    pub continuation_deltas: usize,
    pub corrected: CorrectionFlag,
    pub duplication_warning: bool,
    pub degraded: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CollaborativeOutcome {
    pub opener: OpenerResult,
    pub continuation: ContinuationResult,
    pub metrics: SessionMetrics,
    pub timeline: SessionTimeline,
    pub cloud_error: Option<CloudError>,
}

fn line_starts_with_marker(text: &str) -> bool {
    text.lines().any(|l| l.trim_start().starts_with(CORRECTION_MARKER))
}

/// Runs one session, sending every event to `sink` as it happens.
///
/// Errors are returned only for failures before the first event (such as a
/// prompt that does not fit the context). Cloud failures become an `error`
/// event and leave the opener committed.
pub async fn run_collaborative(
    request: &CollaborativeRequest,
    lm: &mut (dyn LanguageModel + Send),
    tokenizer: &TokenizerModel,
    continuator: &dyn Continuator,
    clock: &dyn Clock,
    rng: &mut (dyn RngCore + Send),
    sink: &mut (dyn FnMut(SessionEvent) + Send),
) -> mulm_core::Result<CollaborativeOutcome> {
    let request_received = clock.now_ms();
    let options = GenerationOptions {
        word_budget: request.word_budget,
        policy: request.policy,
    };
    let mut opener_events = 0usize;
    let opener = generate_opener(
        lm,
        tokenizer,
        &ChatTranscript::single(request.query.clone()),
        &options,
        rng,
        clock,
        request_received,
        &mut |t| {
            opener_events += 1;
            sink(SessionEvent::OpenerToken {
                text: t.text_delta.clone(),
                token_id: Some(t.token_id),
                t_ms: t.t_ms,
            });
        },
    )?;
    if opener_events == 0 {
        sink(SessionEvent::OpenerToken {
            text: String::new(),
            token_id: None,
            t_ms: clock.now_ms() - request_received,
        });
    }

    let mut timeline = opener.timeline.clone();
    timeline.done = None;
    let dispatched = clock.now_ms();
    timeline.handoff_dispatched = Some(dispatched);
    sink(SessionEvent::Handoff {
        opener: opener.text.clone(),
        word_count: opener.word_count,
        stop_reason: opener.stop_reason,
        mode: request.mode,
        t_ms: dispatched - request_received,
    });

    let messages = build_continuation_prompt(&request.query, &opener.text, request.mode);
    let mut received = String::new();
    let mut first_byte = None;
    let mut deltas = 0usize;
    let mut correction_sent = false;
    let explicit = request.mode == RecoveryMode::ExplicitCorrection;
    let result = continuator
        .continue_stream(&messages, &mut |delta: &str| {
            let now = clock.now_ms();
            let mut text = String::with_capacity(delta.len() + 1);
            if first_byte.is_none() {
                first_byte = Some(now);
                text.push_str(separator(&opener.text, delta));
            }
            text.push_str(delta);
            received.push_str(delta);
            deltas += 1;
            sink(SessionEvent::ContinuationToken {
                text,
                t_ms: now - request_received,
            });
            if explicit && !correction_sent && line_starts_with_marker(&received) {
                correction_sent = true;
                sink(SessionEvent::Correction {
                    t_ms: now - request_received,
                });
            }
        })
        .await;

    timeline.cloud_first_byte = first_byte;
    let cloud_error = result.err();
    let corrected = detect_correction(&received, request.mode, request.adjudicated);
    let stitched_text = stitch(&opener.text, &received);
    let done = clock.now_ms();
    timeline.done = Some(done);

    let metrics = SessionMetrics {
        ttft_ms: compute_ttft(&timeline).ok(),
        time_to_budget_ms: request
            .word_budget
            .and_then(|b| compute_time_to_n_words(&timeline, b.get())),
        prefill_ms: opener.timing.prefill_ms,
        prompt_tokens: opener.prompt_tokens,
        opener_tokens: opener.token_ids.len(),
        opener_words: opener.word_count,
        handoff_ms: dispatched - request_received,
        cloud_ttfb_ms: first_byte.map(|t| t - dispatched),
        total_ms: done - request_received,
        continuation_deltas: deltas,
        corrected,
        duplication_warning: duplication_warning(&opener.text, &received),
        degraded: cloud_error.is_some(),
    };
    match &cloud_error {
        None => sink(SessionEvent::Done {
            stitched_text: stitched_text.clone(),
            metrics: metrics.clone(),
            t_ms: done - request_received,
        }),
        Some(e) => sink(SessionEvent::Error {
            message: e.to_string(),
            degraded: true,
            t_ms: done - request_received,
        }),
    }

    Ok(CollaborativeOutcome {
        continuation: ContinuationResult {
            continuation_text: received,
            stitched_text,
            corrected,
            ttfb_cloud_ms: metrics.cloud_ttfb_ms,
            tokens_received: metrics.continuation_deltas,
        },
        opener,
        metrics,
        timeline,
        cloud_error,
    })
}

