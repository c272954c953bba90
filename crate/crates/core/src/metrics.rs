//! Latency, throughput, energy and correction-rate measurement.
//!
//! All timestamps are milliseconds on a monotonic clock. Metric functions
//! are pure over a [`SessionTimeline`].

use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub trait Clock: Send + Sync {
    fn now_ms(&self) -> f64;
}

#[derive(Debug, Clone, Copy)]
pub struct MonotonicClock {
    origin: Instant,
}

impl MonotonicClock {
    pub fn new() -> Self {
        Self { origin: Instant::now() }
    }
}

impl Default for MonotonicClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for MonotonicClock {
    fn now_ms(&self) -> f64 {
        self.origin.elapsed().as_secs_f64() * 1e3
    }
}

/// Test clock: time only moves when told to, or by `tick_ms` on every read.
#[derive(Debug, Default)]
pub struct ManualClock {
    now_bits: AtomicU64,
    tick_bits: AtomicU64,
}

impl ManualClock {
    pub fn new(start_ms: f64) -> Self {
        Self {
            now_bits: AtomicU64::new(start_ms.to_bits()),
            tick_bits: AtomicU64::new(0f64.to_bits()),
        }
    }

    /// Every `now_ms` call returns the current time and then advances it by `tick_ms`.
    pub fn ticking(start_ms: f64, tick_ms: f64) -> Self {
        let c = Self::new(start_ms);
        c.tick_bits.store(tick_ms.to_bits(), Ordering::SeqCst);
        c
    }

    pub fn set(&self, ms: f64) {
        self.now_bits.store(ms.to_bits(), Ordering::SeqCst);
    }

    pub fn advance(&self, ms: f64) {
        let _ = self
            .now_bits
            .fetch_update(Ordering::SeqCst, Ordering::SeqCst, |b| Some((f64::from_bits(b) + ms).to_bits()));
    }
}

impl Clock for ManualClock {
    fn now_ms(&self) -> f64 {
        let tick = f64::from_bits(self.tick_bits.load(Ordering::SeqCst));
        let prev = self
            .now_bits
            .fetch_update(Ordering::SeqCst, Ordering::SeqCst, |b| Some((f64::from_bits(b) + tick).to_bits()))
            .expect("update closure always succeeds");
        f64::from_bits(prev)
    }
}

/// Monotonic stamps for one request. Cloud fields stay empty in standalone runs.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SessionTimeline {
    pub request_received: f64,
    pub prefill_done: Option<f64>,
    pub first_token: Option<f64>,
    /// One stamp per committed opener token.
    pub token_stamps: Vec<f64>,
    /// Stamp of the final token of each completed word, in order.
    pub word_completions: Vec<f64>,
    pub word_budget_reached: Option<f64>,
    pub handoff_dispatched: Option<f64>,
    pub cloud_first_byte: Option<f64>,
    pub done: Option<f64>,
}

impl SessionTimeline {
    pub fn new(request_received: f64) -> Self {
        Self {
            request_received,
            ..Default::default()
        }
    }

    /// Checks that the recorded stamps never go backwards.
    pub fn validate(&self) -> Result<()> {
        let mut last = self.request_received;
        let mut check = |name: &str, t: Option<f64>| -> Result<()> {
            if let Some(t) = t {
                if t < last {
                    return Err(Error::Domain(format!("timeline stamp {name} = {t} precedes {last}")));
                }
                last = t;
            }
            Ok(())
        };
        check("prefill_done", self.prefill_done)?;
        check("first_token", self.first_token)?;
        for &t in &self.token_stamps {
            check("token", Some(t))?;
        }
        check("handoff_dispatched", self.handoff_dispatched)?;
        check("cloud_first_byte", self.cloud_first_byte)?;
        check("done", self.done)?;
        if self.word_completions.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::Domain("word completions out of order".into()));
        }
        // word stamps are token stamps, so they sit inside the token span
        let lo = self.first_token.unwrap_or(self.request_received);
        let hi = self.handoff_dispatched.or(self.done).unwrap_or(f64::INFINITY);
        for &t in self.word_completions.iter().chain(self.word_budget_reached.iter()) {
            if t < lo || t > hi {
                return Err(Error::Domain(format!("word stamp {t} outside [{lo}, {hi}]")));
            }
        }
        Ok(())
    }
}

/// Time to first token: `first_token − request_received`.
pub fn compute_ttft(tl: &SessionTimeline) -> Result<f64> {
    let first = tl.first_token.ok_or(Error::IncompleteTimeline("first_token"))?;
    Ok(first - tl.request_received)
}

/// Time until the `n`th word was committed; `None` when fewer words exist.
pub fn compute_time_to_n_words(tl: &SessionTimeline, n: usize) -> Option<f64> {
    if n == 0 {
        return Some(0.0);
    }
    tl.word_completions.get(n - 1).map(|t| t - tl.request_received)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Throughputs {
    /// (prompt + generated) tokens over the whole request.
    pub end_to_end: f64,
    /// Generated tokens over the decode span.
    pub generation: f64,
    /// Prompt tokens over the prefill span.
    pub prompt: f64,
}

/// Tokens per second for the prefill, decode and end-to-end spans.
pub fn compute_throughputs(tl: &SessionTimeline, prompt_tokens: u64, generated_tokens: u64) -> Result<Throughputs> {
    let prefill = tl.prefill_done.ok_or(Error::IncompleteTimeline("prefill_done"))?;
    let done = tl.done.ok_or(Error::IncompleteTimeline("done"))?;
    if prompt_tokens == 0 || generated_tokens == 0 {
        return Err(Error::Domain("token counts must be positive".into()));
    }
    let rate = |tokens: u64, span_ms: f64| -> Result<f64> {
        if span_ms <= 0.0 {
            return Err(Error::Domain(format!("non-positive span of {span_ms} ms")));
        }
        Ok(tokens as f64 / (span_ms / 1e3))
    };
    Ok(Throughputs {
        end_to_end: rate(prompt_tokens + generated_tokens, done - tl.request_received)?,
        generation: rate(generated_tokens, done - prefill)?,
        prompt: rate(prompt_tokens, prefill - tl.request_received)?,
    })
}

/// Cumulative meter readings around a measurement window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyReading {
    pub energy_before_mj: f64,
    pub energy_after_mj: f64,
    pub duration_s: f64,
    pub idle_power_mw: f64,
    pub generated_tokens: u64,
}

/// Inference-only energy per generated token, in mJ, floored at zero.
pub fn compute_dynamic_energy(r: &EnergyReading) -> Result<f64> {
    if r.generated_tokens == 0 {
        return Err(Error::Domain("no generated tokens in the energy window".into()));
    }
    if r.duration_s.is_nan() || r.duration_s <= 0.0 {
        return Err(Error::Domain("energy window duration must be positive".into()));
    }
    if r.energy_after_mj < r.energy_before_mj {
        return Err(Error::Domain("meter reading went backwards".into()));
    }
    let gross = r.energy_after_mj - r.energy_before_mj;
    let idle = r.idle_power_mw * r.duration_s;
    Ok(((gross - idle) / r.generated_tokens as f64).max(0.0))
}

/// Whether a continuation corrected its opener, where known.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorrectionFlag {
    Corrected,
    NotCorrected,
    /// No mechanical marker and no adjudication.
    Unknown,
}

impl CorrectionFlag {
    pub fn from_bool(corrected: bool) -> Self {
        if corrected {
            Self::Corrected
        } else {
            Self::NotCorrected
        }
    }

    pub fn as_bool(self) -> Option<bool> {
        match self {
            Self::Corrected => Some(true),
            Self::NotCorrected => Some(false),
            Self::Unknown => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorrectionRate {
    pub corrected: u64,
    pub total: u64,
    /// Percentage in tenths, rounded half up.
    pub per_mille: u64,
}

impl CorrectionRate {
    pub fn percent(&self) -> f64 {
        self.per_mille as f64 / 10.0
    }
}

impl fmt::Display for CorrectionRate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}%", self.per_mille / 10, self.per_mille % 10)
    }
}

pub fn compute_correction_rate(flags: &[CorrectionFlag]) -> Result<CorrectionRate> {
    if flags.is_empty() {
        return Err(Error::Domain("no continuations to rate".into()));
    }
    let mut corrected = 0u64;
    for (i, f) in flags.iter().enumerate() {
        match f.as_bool() {
            Some(true) => corrected += 1,
            Some(false) => {}
            None => {
                return Err(Error::Indeterminate(format!(
                    "continuation {i} has no definite correction flag"
                )))
            }
        }
    }
    let total = flags.len() as u64;
    let per_mille = (corrected * 1000 + total / 2) / total;
    Ok(CorrectionRate {
        corrected,
        total,
        per_mille,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table4() -> SessionTimeline {
        // request at t=1000, prefill 42 ms, first decode 3 ms, four words by 55 ms
        SessionTimeline {
            request_received: 1000.0,
            prefill_done: Some(1042.0),
            first_token: Some(1045.0),
            token_stamps: vec![1045.0, 1048.0, 1051.0, 1053.0, 1055.0, 1058.0],
            word_completions: vec![1045.0, 1048.0, 1053.0, 1055.0],
            word_budget_reached: Some(1055.0),
            done: Some(1058.0),
            ..Default::default()
        }
    }

    #[test]
    fn ttft_matches_latency_breakdown() {
        let tl = table4();
        assert_eq!(compute_ttft(&tl).unwrap(), 45.0);
        let prefill = tl.prefill_done.unwrap() - tl.request_received;
        let first = tl.first_token.unwrap() - tl.prefill_done.unwrap();
        assert_eq!(compute_ttft(&tl).unwrap(), prefill + first);
        assert_eq!((prefill, first), (42.0, 3.0));
    }

    #[test]
    fn ttft_edges() {
        let mut tl = SessionTimeline::new(5.0);
        assert!(matches!(compute_ttft(&tl), Err(Error::IncompleteTimeline("first_token"))));
        tl.first_token = Some(5.0);
        assert_eq!(compute_ttft(&tl).unwrap(), 0.0);
        tl.first_token = Some(17.25);
        assert_eq!(compute_ttft(&tl).unwrap(), 12.25);
    }

    #[test]
    fn time_to_words() {
        let tl = table4();
        assert_eq!(compute_time_to_n_words(&tl, 4), Some(55.0));
        assert_eq!(compute_time_to_n_words(&tl, 0), Some(0.0));
        assert_eq!(compute_time_to_n_words(&tl, 2), Some(48.0));
        assert_eq!(compute_time_to_n_words(&tl, 5), None);
    }

    #[test]
    fn throughputs() {
        let tl = SessionTimeline {
            request_received: 0.0,
            prefill_done: Some(100.0),
            done: Some(1100.0),
            ..Default::default()
        };
        let t = compute_throughputs(&tl, 100, 351).unwrap();
        assert_eq!(t.prompt, 1000.0);
        assert_eq!(t.generation, 351.0);
        assert!((t.end_to_end - 451.0 / 1.1).abs() < 1e-9);
        assert!(t.end_to_end <= t.prompt.max(t.generation));

        let single = SessionTimeline {
            request_received: 0.0,
            prefill_done: Some(10.0),
            done: Some(14.0),
            ..Default::default()
        };
        assert_eq!(compute_throughputs(&single, 3, 1).unwrap().generation, 1.0 / 0.004);

        let zero = SessionTimeline {
            request_received: 0.0,
            prefill_done: Some(0.0),
            done: Some(5.0),
            ..Default::default()
        };
        assert!(matches!(compute_throughputs(&zero, 1, 1), Err(Error::Domain(_))));
        assert!(compute_throughputs(&tl, 0, 1).is_err());
        assert!(compute_throughputs(&SessionTimeline::new(0.0), 1, 1).is_err());
    }

    #[test]
    fn dynamic_energy() {
        let r = EnergyReading {
            energy_before_mj: 500.0,
            energy_after_mj: 4600.0,
            duration_s: 100.0,
            idle_power_mw: 10.0,
            generated_tokens: 100,
        };
        assert_eq!(compute_dynamic_energy(&r).unwrap(), 31.0);
        let idle_only = EnergyReading { idle_power_mw: 41.0, ..r };
        assert_eq!(compute_dynamic_energy(&idle_only).unwrap(), 0.0);
        let noisy = EnergyReading { idle_power_mw: 50.0, ..r };
        assert_eq!(compute_dynamic_energy(&noisy).unwrap(), 0.0);
        let gross = EnergyReading { idle_power_mw: 0.0, ..r };
        assert_eq!(compute_dynamic_energy(&gross).unwrap(), 41.0);
        assert!(compute_dynamic_energy(&EnergyReading { generated_tokens: 0, ..r }).is_err());
        assert!(compute_dynamic_energy(&EnergyReading { duration_s: 0.0, ..r }).is_err());
        assert!(compute_dynamic_energy(&EnergyReading { energy_after_mj: 0.0, ..r }).is_err());
    }

    #[test]
    fn correction_rates() {
        let flags = |k: usize| -> Vec<CorrectionFlag> {
            (0..1000).map(|i| CorrectionFlag::from_bool(i < k)).collect()
        };
        assert_eq!(compute_correction_rate(&flags(84)).unwrap().to_string(), "8.4%");
        assert_eq!(compute_correction_rate(&flags(0)).unwrap().to_string(), "0.0%");
        assert_eq!(compute_correction_rate(&flags(1000)).unwrap().to_string(), "100.0%");
        assert_eq!(compute_correction_rate(&flags(37)).unwrap().percent(), 3.7);
        assert!(matches!(compute_correction_rate(&[]), Err(Error::Domain(_))));
        let mut mixed = flags(5);
        mixed[3] = CorrectionFlag::Unknown;
        assert!(matches!(compute_correction_rate(&mixed), Err(Error::Indeterminate(_))));
        // 1 of 3 = 33.33…% → 33.3%
        let third = [CorrectionFlag::Corrected, CorrectionFlag::NotCorrected, CorrectionFlag::NotCorrected];
        assert_eq!(compute_correction_rate(&third).unwrap().to_string(), "33.3%");
    }

    #[test]
    fn timeline_order_is_checked() {
        let mut tl = table4();
        assert!(tl.validate().is_ok());
        tl.done = Some(1.0);
        assert!(tl.validate().is_err());
    }

    #[test]
    fn manual_clock() {
        let c = ManualClock::new(10.0);
        assert_eq!(c.now_ms(), 10.0);
        c.advance(2.5);
        assert_eq!(c.now_ms(), 12.5);
        let t = ManualClock::ticking(0.0, 1.0);
        assert_eq!((t.now_ms(), t.now_ms(), t.now_ms()), (0.0, 1.0, 2.0));
        let m = MonotonicClock::new();
        let a = m.now_ms();
        assert!(m.now_ms() >= a);
    }

    #[test]
    fn metrics_are_pure() {
        let tl = table4();
        assert_eq!(compute_ttft(&tl).unwrap().to_bits(), compute_ttft(&tl).unwrap().to_bits());
        assert_eq!(
            compute_throughputs(&tl, 10, 6).unwrap(),
            compute_throughputs(&tl, 10, 6).unwrap()
        );
    }
}
