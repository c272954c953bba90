//! Commit-and-continue collaboration: a local opener is streamed and
//! committed, then a remote chat-completion model continues it.

pub mod client;
mod error;
pub mod orchestrator;
pub mod prompts;
pub mod stitch;

pub use client::{ChatMessage, CloudEndpointConfig, Continuator, HttpContinuator, ScriptedContinuator, StreamSummary};
pub use error::CloudError;
pub use orchestrator::{
    check_event_grammar, render_events, run_collaborative, CollaborativeOutcome, CollaborativeRequest, ContinuationResult,
    SessionEvent, SessionMetrics,
};
pub use prompts::{build_continuation_prompt, verify_prompts, RecoveryMode};
pub use stitch::{detect_correction, duplication_warning, stitch, CORRECTION_MARKER};
