//! Autoregressive generation and the word-budget committer.
//!
//! Every token is handed to the sink as soon as it is decoded; committed
//! text is never retracted. Generation stops before the first token that
//! would start a word past the budget.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{Clock, SessionTimeline};
use crate::model::{KVCache, Model};
use crate::tensor::softmax;
use crate::tokenizer::{ChatTranscript, TokenizerModel};

pub const MAX_WORD_BUDGET: usize = 32;

/// Anything that produces next-token logits incrementally.
pub trait LanguageModel {
    fn vocab_size(&self) -> usize;

    fn max_seq_len(&self) -> usize;

    /// Positions consumed so far.
    fn position(&self) -> usize;

    /// Resets state, consumes the prompt and returns next-token logits.
    fn start(&mut self, prompt: &[u32]) -> Result<Vec<f32>>;

    fn step(&mut self, token: u32) -> Result<Vec<f32>>;
}

/// One decoding session over a shared [`Model`].
pub struct ModelSession<'a> {
    model: &'a Model,
    cache: KVCache,
}

impl<'a> ModelSession<'a> {
    pub fn new(model: &'a Model) -> Self {
        Self {
            model,
            cache: model.new_cache(),
        }
    }

    pub fn cache(&self) -> &KVCache {
        &self.cache
    }
}

impl LanguageModel for ModelSession<'_> {
    fn vocab_size(&self) -> usize {
        self.model.config().vocab_size
    }

    fn max_seq_len(&self) -> usize {
        self.model.config().max_seq_len
    }

    fn position(&self) -> usize {
        self.cache.current_len()
    }

    fn start(&mut self, prompt: &[u32]) -> Result<Vec<f32>> {
        let (logits, cache) = self.model.prefill(prompt)?;
        self.cache = cache;
        Ok(logits)
    }

    fn step(&mut self, token: u32) -> Result<Vec<f32>> {
        self.model.decode_step(token, &mut self.cache)
    }
}

/// Replays a fixed token script as one-hot logits, then repeats `end_id`.
/// Useful as a deterministic stand-in for a trained model.
#[derive(Debug, Clone)]
pub struct ScriptedModel {
    script: Vec<u32>,
    end_id: u32,
    vocab_size: usize,
    max_seq_len: usize,
    position: usize,
    emitted: usize,
}

impl ScriptedModel {
    pub fn new(script: Vec<u32>, tokenizer: &TokenizerModel) -> Self {
        Self {
            script,
            end_id: tokenizer.end_id().unwrap_or(0),
            vocab_size: tokenizer.vocab_size(),
            max_seq_len: 1024,
            position: 0,
            emitted: 0,
        }
    }

    pub fn with_max_seq_len(mut self, max_seq_len: usize) -> Self {
        self.max_seq_len = max_seq_len;
        self
    }

    fn next_logits(&mut self) -> Vec<f32> {
        let id = self.script.get(self.emitted).copied().unwrap_or(self.end_id);
        self.emitted += 1;
        let mut logits = vec![0.0; self.vocab_size];
        logits[id as usize] = 1.0;
        logits
    }
}

impl LanguageModel for ScriptedModel {
    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn max_seq_len(&self) -> usize {
        self.max_seq_len
    }

    fn position(&self) -> usize {
        self.position
    }

    fn start(&mut self, prompt: &[u32]) -> Result<Vec<f32>> {
        if prompt.len() > self.max_seq_len {
            return Err(Error::ContextOverflow {
                len: prompt.len(),
                max: self.max_seq_len,
            });
        }
        self.position = prompt.len();
        self.emitted = 0;
        Ok(self.next_logits())
    }

    fn step(&mut self, _token: u32) -> Result<Vec<f32>> {
        if self.position >= self.max_seq_len {
            return Err(Error::ContextOverflow {
                len: self.position + 1,
                max: self.max_seq_len,
            });
        }
        self.position += 1;
        Ok(self.next_logits())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingPolicy {
    /// 0 selects the argmax.
    pub temperature: f32,
    pub max_tokens: usize,
}

impl SamplingPolicy {
    pub fn greedy(max_tokens: usize) -> Self {
        Self {
            temperature: 0.0,
            max_tokens,
        }
    }
}

impl Default for SamplingPolicy {
    fn default() -> Self {
        Self::greedy(64)
    }
}

/// Argmax (lowest index on ties) at temperature 0, otherwise a draw from
/// `softmax(logits / T)`.
pub fn sample<R: Rng + ?Sized>(logits: &[f32], policy: &SamplingPolicy, rng: &mut R) -> u32 {
    if policy.temperature <= 0.0 {
        return argmax(logits);
    }
    let scaled: Vec<f32> = logits.iter().map(|l| l / policy.temperature).collect();
    let probs = softmax(&scaled);
    let u: f32 = rng.random();
    let mut acc = 0.0f32;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i as u32;
        }
    }
    // rounding left `acc` just under 1
    probs.iter().rposition(|p| *p > 0.0).unwrap_or(0) as u32
}

pub fn argmax(logits: &[f32]) -> u32 {
    let mut best = 0;
    for (i, v) in logits.iter().enumerate() {
        if *v > logits[best] {
            best = i;
        }
    }
    best as u32
}

/// Number of maximal non-whitespace runs.
pub fn count_words(text: &str) -> usize {
    text.split_whitespace().count()
}

/// Byte index where the `n`th (1-based) word begins.
fn word_start(text: &str, n: usize) -> Option<usize> {
    let mut seen = 0;
    let mut prev_ws = true;
    for (i, c) in text.char_indices() {
        let ws = c.is_whitespace();
        if !ws && prev_ws {
            seen += 1;
            if seen == n {
                return Some(i);
            }
        }
        prev_ws = ws;
    }
    None
}

/// A word budget in `1..=32`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "usize", into = "usize")]
pub struct WordBudget(usize);

impl WordBudget {
    pub fn new(words: usize) -> Result<Self> {
        if (1..=MAX_WORD_BUDGET).contains(&words) {
            Ok(Self(words))
        } else {
            Err(Error::Config(format!("word budget {words} outside 1..={MAX_WORD_BUDGET}")))
        }
    }

    pub fn get(self) -> usize {
        self.0
    }
}

impl TryFrom<usize> for WordBudget {
    type Error = Error;

    fn try_from(v: usize) -> Result<Self> {
        Self::new(v)
    }
}

impl From<WordBudget> for usize {
    fn from(b: WordBudget) -> usize {
        b.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    WordBudget,
    EndToken,
    MaxTokens,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct OpenerTiming {
    pub prefill_ms: f64,
    pub first_decode_ms: f64,
    pub total_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpenerResult {
    pub text: String,
    pub token_ids: Vec<u32>,
    pub word_count: usize,
    pub timing: OpenerTiming,
    pub stop_reason: StopReason,
    pub prompt_tokens: usize,
    /// Tokens sampled, including any end marker or a dropped straddling token.
    pub sampled_tokens: usize,
    pub timeline: SessionTimeline,
}

/// Streaming sink event for one committed token.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpenerToken {
    pub text_delta: String,
    pub token_id: u32,
    /// Milliseconds since the request was received.
    pub t_ms: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GenerationOptions {
    /// `None` decodes until an end marker or `max_tokens`.
    pub word_budget: Option<WordBudget>,
    pub policy: SamplingPolicy,
}

// Tracks word boundaries over committed text and when each word's final
// token was committed.
#[derive(Default)]
struct WordTracker {
    in_word: bool,
    last_stamp: f64,
    completions: Vec<f64>,
}

impl WordTracker {
    fn feed(&mut self, delta: &str, stamp: f64) {
        for c in delta.chars() {
            if c.is_whitespace() {
                if self.in_word {
                    self.completions.push(self.last_stamp);
                    self.in_word = false;
                }
            } else {
                self.in_word = true;
                self.last_stamp = stamp;
            }
        }
    }

    fn finish(mut self) -> Vec<f64> {
        if self.in_word {
            self.completions.push(self.last_stamp);
        }
        self.completions
    }
}

/// Generates the local opener for the last user turn of `transcript`.
///
/// `request_received` anchors the timeline; pass `clock.now_ms()` taken
/// when the request arrived.
#[allow(clippy::too_many_arguments)]
pub fn generate_opener<L, R>(
    lm: &mut L,
    tokenizer: &TokenizerModel,
    transcript: &ChatTranscript,
    options: &GenerationOptions,
    rng: &mut R,
    clock: &dyn Clock,
    request_received: f64,
    sink: &mut dyn FnMut(&OpenerToken),
) -> Result<OpenerResult>
where
    L: LanguageModel + ?Sized,
    R: Rng + ?Sized,
{
    let mut timeline = SessionTimeline::new(request_received);
    let prompt = tokenizer.render_chat(transcript, true)?;
    if prompt.len() > lm.max_seq_len() {
        return Err(Error::ContextOverflow {
            len: prompt.len(),
            max: lm.max_seq_len(),
        });
    }
    if lm.vocab_size() != tokenizer.vocab_size() {
        return Err(Error::Config(format!(
            "model vocabulary {} does not match tokenizer vocabulary {}",
            lm.vocab_size(),
            tokenizer.vocab_size()
        )));
    }

    let mut logits = lm.start(&prompt)?;
    timeline.prefill_done = Some(clock.now_ms());

    let mut decoder = tokenizer.streaming_decoder();
    let mut words = WordTracker::default();
    let mut text = String::new();
    let mut token_ids = Vec::new();
    let mut held_ws = String::new();
    let mut sampled = 0;
    let stop_reason = loop {
        if sampled >= options.policy.max_tokens {
            break StopReason::MaxTokens;
        }
        let token = sample(&logits, &options.policy, rng);
        sampled += 1;
        if tokenizer.is_special(token) {
            break StopReason::EndToken;
        }
        let mut delta = std::mem::take(&mut held_ws) + &decoder.push(token)?;
        let mut over_budget = false;
        if let Some(budget) = options.word_budget {
            let combined = format!("{text}{delta}");
            if let Some(start) = word_start(&combined, budget.get() + 1) {
                delta = combined[text.len()..start].to_string();
                over_budget = true;
            }
        }
        // trailing whitespace is released only once more text follows it
        let keep = delta.trim_end().len();
        held_ws = delta.split_off(keep);
        if !(over_budget && delta.is_empty()) {
            let now = clock.now_ms();
            if timeline.first_token.is_none() {
                timeline.first_token = Some(now);
            }
            timeline.token_stamps.push(now);
            words.feed(&delta, now);
            text.push_str(&delta);
            token_ids.push(token);
            sink(&OpenerToken {
                text_delta: delta,
                token_id: token,
                t_ms: now - request_received,
            });
        }
        if over_budget {
            break StopReason::WordBudget;
        }
        if lm.position() >= lm.max_seq_len() {
            break StopReason::MaxTokens;
        }
        logits = lm.step(token)?;
    };
    // held whitespace and the bytes of an unfinished character are dropped

    timeline.word_completions = words.finish();
    if let Some(budget) = options.word_budget {
        timeline.word_budget_reached = timeline.word_completions.get(budget.get() - 1).copied();
    }
    let done = clock.now_ms();
    timeline.done = Some(done);

    let prefill_done = timeline.prefill_done.unwrap_or(request_received);
    let timing = OpenerTiming {
        prefill_ms: prefill_done - request_received,
        first_decode_ms: timeline.first_token.map_or(0.0, |t| t - prefill_done),
        total_ms: done - request_received,
    };
    Ok(OpenerResult {
        word_count: count_words(&text),
        text,
        token_ids,
        timing,
        stop_reason,
        prompt_tokens: prompt.len(),
        sampled_tokens: sampled,
        timeline,
    })
}
