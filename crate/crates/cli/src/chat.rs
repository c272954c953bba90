//! Interactive chat: opener first, then the cloud continuation.

use std::io::{BufRead, Write};

use mulm_core::decoder::{generate_opener, GenerationOptions, ModelSession, SamplingPolicy, WordBudget};
use mulm_core::metrics::{Clock, MonotonicClock};
use mulm_core::tokenizer::ChatTranscript;
use mulm_handoff::{run_collaborative, CollaborativeRequest, Continuator, RecoveryMode, SessionEvent};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::engine::Engine;
use crate::error::CliResult;

#[derive(Debug, Clone)]
pub struct ChatOptions {
    pub word_budget: WordBudget,
    pub mode: RecoveryMode,
    pub policy: SamplingPolicy,
    pub seed: u64,
}

/// Prints the local model's answer with no word budget.
pub fn answer_standalone<W: Write>(
    engine: &Engine,
    query: &str,
    policy: SamplingPolicy,
    rng: &mut ChaCha8Rng,
    clock: &dyn Clock,
    out: &mut W,
) -> CliResult<String> {
    let mut write_err = None;
    let result = generate_opener(
        &mut ModelSession::new(&engine.model),
        &engine.tokenizer,
        &ChatTranscript::single(query),
        &GenerationOptions {
            word_budget: None,
            policy,
        },
        rng,
        clock,
        clock.now_ms(),
        &mut |t| {
            if let Err(e) = out.write_all(t.text_delta.as_bytes()).and_then(|_| out.flush()) {
                write_err.get_or_insert(e);
            }
        },
    )?;
    if let Some(e) = write_err {
        return Err(e.into());
    }
    Ok(result.text)
}

/// Reads one query per line until end of input or `/quit`.
///
/// Without a continuator every answer is local. After a cloud failure the
/// session notes it and answers locally from then on.
pub async fn run_chat<R: BufRead, W: Write + Send>(
    engine: &Engine,
    continuator: Option<&dyn Continuator>,
    options: &ChatOptions,
    input: R,
    out: &mut W,
) -> CliResult<()> {
    let clock = MonotonicClock::new();
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let mut cloud = continuator;
    for line in input.lines() {
        let line = line?;
        let query = line.trim();
        if query.is_empty() {
            continue;
        }
        if query == "/quit" {
            break;
        }
        let Some(continuator) = cloud else {
            if let Err(e) = answer_standalone(engine, query, options.policy, &mut rng, &clock, out) {
                writeln!(out, "[error: {e}]")?;
            }
            writeln!(out)?;
            continue;
        };
        let request = CollaborativeRequest {
            query: query.to_string(),
            word_budget: Some(options.word_budget),
            mode: options.mode,
            policy: options.policy,
            adjudicated: None,
        };
        let mut write_err = None;
        let mut failed = None;
        let mut lm = ModelSession::new(&engine.model);
        let outcome = run_collaborative(
            &request,
            &mut lm,
            &engine.tokenizer,
            continuator,
            &clock,
            &mut rng,
            &mut |event| {
                let text = match &event {
                    SessionEvent::Error { message, .. } => {
                        failed = Some(message.clone());
                        format!("\n[cloud unavailable: {message}; answering locally from now on]")
                    }
                    other => other.visible_text().to_string(),
                };
                if let Err(e) = out.write_all(text.as_bytes()).and_then(|_| out.flush()) {
                    write_err.get_or_insert(e);
                }
            },
        )
        .await;
        if let Some(e) = write_err {
            return Err(e.into());
        }
        if let Err(e) = outcome {
            writeln!(out, "[error: {e}]")?;
        }
        if failed.is_some() {
            cloud = None;
        }
        writeln!(out)?;
    }
    Ok(())
}
