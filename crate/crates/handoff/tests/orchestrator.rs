use mulm_core::decoder::{ScriptedModel, WordBudget};
use mulm_core::metrics::{CorrectionFlag, ManualClock};
use mulm_core::tokenizer::{train_bpe, TokenizerModel};
use mulm_handoff::orchestrator::render_events;
use mulm_handoff::{
    check_event_grammar, run_collaborative, CloudError, CollaborativeOutcome, CollaborativeRequest, RecoveryMode,
    ScriptedContinuator, SessionEvent,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const VAN_GOGH_Q: &str = "What if Vincent van Gogh had been a successful artist during his lifetime?";
const VAN_GOGH_LOCAL: &str = "Vincent van Gogh was a significant figure in the development of modern art.";
const NEEDLE_Q: &str = "How old is the Space Needle?";
const NEEDLE_LOCAL: &str = "The size of a space needle is determined by its structural design.";
const TFLITE_Q: &str = "What is TFLite Micro?";
const TFLITE_LOCAL: &str = "TFLite Micro is a company that specializes in tiny sensors.";

fn tokenizer() -> TokenizerModel {
    train_bpe(&[VAN_GOGH_Q, VAN_GOGH_LOCAL, NEEDLE_Q, NEEDLE_LOCAL, TFLITE_Q, TFLITE_LOCAL], 420).unwrap()
}

async fn session(
    tok: &TokenizerModel,
    query: &str,
    local: &str,
    budget: usize,
    mode: RecoveryMode,
    cloud: &ScriptedContinuator,
    clock: &ManualClock,
) -> (CollaborativeOutcome, Vec<SessionEvent>) {
    let mut lm = ScriptedModel::new(tok.encode(local), tok);
    let request = CollaborativeRequest::new(query, budget, mode).unwrap();
    let mut events = Vec::new();
    let outcome = run_collaborative(
        &request,
        &mut lm,
        tok,
        cloud,
        clock,
        &mut ChaCha8Rng::seed_from_u64(0),
        &mut |e| events.push(e),
    )
    .await
    .unwrap();
    (outcome, events)
}

fn names(events: &[SessionEvent]) -> Vec<&'static str> {
    events.iter().map(SessionEvent::name).collect()
}

#[tokio::test]
async fn events_arrive_in_protocol_order() {
    let tok = tokenizer();
    let cloud = ScriptedContinuator::new(["the development", " of modern art", "."]);
    let clock = ManualClock::ticking(0.0, 1.0);
    let (outcome, events) = session(&tok, VAN_GOGH_Q, VAN_GOGH_LOCAL, 8, RecoveryMode::default(), &cloud, &clock).await;

    check_event_grammar(names(&events)).unwrap();
    let n = names(&events);
    assert_eq!(&n[n.len() - 5..], ["handoff", "continuation_token", "continuation_token", "continuation_token", "done"]);
    let rendered = render_events(&events);
    assert!(rendered.starts_with(&outcome.opener.text));
    assert_eq!(rendered, outcome.continuation.stitched_text);
    assert_eq!(
        outcome.continuation.stitched_text,
        "Vincent van Gogh was a significant figure in the development of modern art."
    );
    assert!(!outcome.metrics.duplication_warning);
    assert_eq!(outcome.continuation.corrected, CorrectionFlag::NotCorrected);
    assert_eq!(outcome.continuation.tokens_received, 3);
    outcome.timeline.validate().unwrap();
}

#[tokio::test]
async fn four_word_restart_is_flagged() {
    let tok = tokenizer();
    let cloud = ScriptedContinuator::new(["Vincent van Gogh was a prolific and emotionally charged painter"]);
    let clock = ManualClock::ticking(0.0, 1.0);
    let (outcome, _) = session(&tok, VAN_GOGH_Q, VAN_GOGH_LOCAL, 4, RecoveryMode::default(), &cloud, &clock).await;
    assert_eq!(outcome.opener.text, "Vincent van Gogh was");
    assert_eq!(
        outcome.continuation.stitched_text,
        "Vincent van Gogh was Vincent van Gogh was a prolific and emotionally charged painter"
    );
    assert!(outcome.metrics.duplication_warning);
}

#[tokio::test]
async fn humor_mode_space_needle() {
    let tok = tokenizer();
    let continuation = "space needle is determined by its structural design\u{2014}oh wait, we're talking age, not size! \
Classic mix-up\u{2014}I blame zero gravity conditions messing with my circuits.\n\
The Space Needle is 63 years old as of 2024, having opened to the public on April 21, 1962, for the Seattle World's Fair.";
    let cloud = ScriptedContinuator::new([continuation]);
    let clock = ManualClock::ticking(0.0, 1.0);
    let (outcome, events) = session(&tok, NEEDLE_Q, NEEDLE_LOCAL, 4, RecoveryMode::HumorAware, &cloud, &clock).await;
    assert_eq!(outcome.opener.text, "The size of a");
    assert_eq!(
        outcome.continuation.stitched_text,
        "The size of a space needle is determined by its structural design\u{2014}oh wait, we're talking age, not size! \
Classic mix-up\u{2014}I blame zero gravity conditions messing with my circuits.\n\
The Space Needle is 63 years old as of 2024, having opened to the public on April 21, 1962, for the Seattle World's Fair."
    );
    assert_eq!(outcome.continuation.corrected, CorrectionFlag::Unknown);
    assert!(!names(&events).contains(&"correction"));
    let system = &cloud.calls()[0][0].content;
    assert!(system.ends_with(mulm_handoff::prompts::HUMOR_PROMPT));

    let cloud = ScriptedContinuator::new(["needle is determined"]);
    let (outcome, _) = session(&tok, NEEDLE_Q, NEEDLE_LOCAL, 5, RecoveryMode::HumorAware, &cloud, &clock).await;
    assert_eq!(outcome.opener.text, "The size of a space");
}

#[tokio::test]
async fn explicit_correction_emits_event() {
    let tok = tokenizer();
    let cloud = ScriptedContinuator::new([
        "\nCorrect",
        "ion: TFLite Micro is not a company; it is a lightweight version of TensorFlow Lite.",
        " It runs on microcontrollers.",
    ]);
    let clock = ManualClock::ticking(0.0, 1.0);
    let (outcome, events) = session(&tok, TFLITE_Q, TFLITE_LOCAL, 8, RecoveryMode::ExplicitCorrection, &cloud, &clock).await;
    assert_eq!(outcome.opener.text, "TFLite Micro is a company that specializes in");
    let n = names(&events);
    check_event_grammar(n.iter().copied()).unwrap();
    let handoff = n.iter().position(|e| *e == "handoff").unwrap();
    assert_eq!(
        &n[handoff..],
        ["handoff", "continuation_token", "continuation_token", "correction", "continuation_token", "done"]
    );
    assert_eq!(outcome.continuation.corrected, CorrectionFlag::Corrected);
    assert!(outcome.continuation.stitched_text.starts_with("TFLite Micro is a company that specializes in\nCorrection: "));
}

#[tokio::test]
async fn cloud_failure_keeps_the_opener() {
    let tok = tokenizer();
    let cloud = ScriptedContinuator::new(["the development", " of modern art"]).failing_after(
        1,
        CloudError::Timeout {
            timeout_ms: 30_000,
            partial: String::new(),
        },
    );
    let clock = ManualClock::ticking(0.0, 1.0);
    let (outcome, events) = session(&tok, VAN_GOGH_Q, VAN_GOGH_LOCAL, 8, RecoveryMode::default(), &cloud, &clock).await;
    check_event_grammar(names(&events)).unwrap();
    assert!(matches!(events.last(), Some(SessionEvent::Error { degraded: true, .. })));
    assert!(outcome.metrics.degraded);
    assert_eq!(outcome.continuation.continuation_text, "the development");
    assert!(render_events(&events).starts_with("Vincent van Gogh was a significant figure in"));
}

#[tokio::test]
async fn empty_opener_still_hands_off() {
    let tok = tokenizer();
    let cloud = ScriptedContinuator::new(["Full answer."]);
    let clock = ManualClock::ticking(0.0, 1.0);
    let (outcome, events) = session(&tok, VAN_GOGH_Q, "", 4, RecoveryMode::default(), &cloud, &clock).await;
    assert_eq!(outcome.opener.text, "");
    assert!(matches!(&events[0], SessionEvent::OpenerToken { text, token_id: None, .. } if text.is_empty()));
    check_event_grammar(names(&events)).unwrap();
    assert_eq!(outcome.continuation.stitched_text, "Full answer.");
    assert!(cloud.calls()[0][1].content.contains("<opener>\n\n</opener>"));
}

#[tokio::test]
async fn dispatch_follows_opener_finalization_immediately() {
    let tok = tokenizer();
    let cloud = ScriptedContinuator::new(["x"]);
    // every clock read costs 1 ms
    let clock = ManualClock::ticking(100.0, 1.0);
    let (outcome, _) = session(&tok, VAN_GOGH_Q, VAN_GOGH_LOCAL, 8, RecoveryMode::default(), &cloud, &clock).await;
    let finalized = outcome.timeline.request_received + outcome.opener.timing.total_ms;
    let dispatched = outcome.timeline.handoff_dispatched.unwrap();
    assert!(dispatched >= finalized);
    assert!(dispatched <= finalized + 5.0, "{dispatched} vs {finalized}");
    assert_eq!(outcome.metrics.time_to_budget_ms, mulm_core::metrics::compute_time_to_n_words(&outcome.timeline, 8));
    assert_eq!(WordBudget::new(8).unwrap().get(), outcome.opener.word_count);
}

#[tokio::test]
async fn identical_inputs_give_identical_streams() {
    let tok = tokenizer();
    let run = || async {
        let cloud = ScriptedContinuator::new(["the development", " of modern art."]);
        let clock = ManualClock::ticking(0.0, 1.0);
        session(&tok, VAN_GOGH_Q, VAN_GOGH_LOCAL, 8, RecoveryMode::default(), &cloud, &clock).await.1
    };
    let a = serde_json::to_string(&run().await).unwrap();
    let b = serde_json::to_string(&run().await).unwrap();
    assert_eq!(a, b);
}
