//! Fixed-window throughput and latency benchmark.
//!
//! A few warm-up runs, then repeated single-turn inference on one prompt
//! for a fixed window. Runs that finish after the window closes are not
//! counted.

use std::io::Write;
use std::path::Path;

use mulm_core::decoder::{generate_opener, GenerationOptions, ModelSession, OpenerResult, SamplingPolicy};
use mulm_core::metrics::{
    compute_dynamic_energy, compute_time_to_n_words, compute_ttft, Clock, EnergyReading, Throughputs,
};
use mulm_core::tokenizer::ChatTranscript;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::engine::Engine;
use crate::error::{CliError, CliResult};

pub const DEFAULT_PROMPT: &str = "What if Vincent van Gogh had been a successful artist during his lifetime?";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchProtocol {
    pub prompt: String,
    pub warmup: usize,
    pub window_s: f64,
    pub max_tokens: usize,
}

impl Default for BenchProtocol {
    fn default() -> Self {
        Self {
            prompt: DEFAULT_PROMPT.into(),
            warmup: 3,
            window_s: 90.0,
            max_tokens: 64,
        }
    }
}

/// Meter readings bracketing the measurement window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyLog {
    pub energy_before_mj: f64,
    pub energy_after_mj: f64,
    pub idle_power_mw: f64,
}

impl EnergyLog {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub config: serde_json::Value,
    pub protocol: BenchProtocol,
    pub runs: usize,
    pub ttft_ms: Option<f64>,
    pub time_to_4_words_ms: Option<f64>,
    pub throughputs: Option<Throughputs>,
    pub energy_mj_per_token: Option<f64>,
    pub correction_rate: Option<String>,
    pub prompt_tokens: u64,
    pub generated_tokens: u64,
    pub tokens_per_run: Vec<usize>,
    pub measured_s: f64,
    pub warnings: Vec<String>,
}

fn run_once(engine: &Engine, protocol: &BenchProtocol, clock: &dyn Clock) -> CliResult<OpenerResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    Ok(generate_opener(
        &mut ModelSession::new(&engine.model),
        &engine.tokenizer,
        &ChatTranscript::single(protocol.prompt.clone()),
        &GenerationOptions {
            word_budget: None,
            policy: SamplingPolicy::greedy(protocol.max_tokens),
        },
        &mut rng,
        clock,
        clock.now_ms(),
        &mut |_| {},
    )?)
}

fn mean(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Runs the protocol; `csv` receives `run,token,t_ms` rows when given.
pub fn run_bench(
    engine: &Engine,
    protocol: &BenchProtocol,
    energy: Option<EnergyLog>,
    clock: &dyn Clock,
    csv: Option<&mut dyn Write>,
) -> CliResult<BenchReport> {
    if !(protocol.window_s.is_finite() && protocol.window_s > 0.0) {
        return Err(CliError::Config("window must be positive".into()));
    }
    if protocol.max_tokens == 0 {
        return Err(CliError::Config("max_tokens must be positive".into()));
    }
    for _ in 0..protocol.warmup {
        run_once(engine, protocol, clock)?;
    }
    let start = clock.now_ms();
    let end = start + protocol.window_s * 1e3;
    let mut runs = Vec::new();
    let mut last_done = start;
    while clock.now_ms() < end {
        let r = run_once(engine, protocol, clock)?;
        let done = r.timeline.done.unwrap_or(f64::INFINITY);
        if done > end {
            break;
        }
        last_done = done;
        runs.push(r);
    }

    let mut warnings = Vec::new();
    if runs.is_empty() {
        warnings.push(format!(
            "measurement window of {} s is shorter than one run; no runs recorded",
            protocol.window_s
        ));
    }
    let prompt_tokens: u64 = runs.iter().map(|r| r.prompt_tokens as u64).sum();
    let generated_tokens: u64 = runs.iter().map(|r| r.sampled_tokens as u64).sum();
    let span = |f: &dyn Fn(&OpenerResult) -> f64| runs.iter().map(f).sum::<f64>() / 1e3;
    let prefill_s = span(&|r| r.timing.prefill_ms);
    let decode_s = span(&|r| r.timing.total_ms - r.timing.prefill_ms);
    let total_s = span(&|r| r.timing.total_ms);
    let throughputs = (prefill_s > 0.0 && decode_s > 0.0 && total_s > 0.0).then(|| Throughputs {
        end_to_end: (prompt_tokens + generated_tokens) as f64 / total_s,
        generation: generated_tokens as f64 / decode_s,
        prompt: prompt_tokens as f64 / prefill_s,
    });
    let measured_s = (last_done - start) / 1e3;
    let energy_mj_per_token = match energy {
        Some(log) if generated_tokens > 0 => Some(compute_dynamic_energy(&EnergyReading {
            energy_before_mj: log.energy_before_mj,
            energy_after_mj: log.energy_after_mj,
            duration_s: measured_s,
            idle_power_mw: log.idle_power_mw,
            generated_tokens,
        })?),
        Some(_) => {
            warnings.push("energy log ignored: no tokens generated".into());
            None
        }
        None => None,
    };

    if let Some(w) = csv {
        writeln!(w, "run,token,t_ms")?;
        for (i, r) in runs.iter().enumerate() {
            for (j, t) in r.timeline.token_stamps.iter().enumerate() {
                writeln!(w, "{i},{j},{:.3}", t - r.timeline.request_received)?;
            }
        }
    }

    Ok(BenchReport {
        config: engine.describe(),
        protocol: protocol.clone(),
        runs: runs.len(),
        ttft_ms: mean(runs.iter().filter_map(|r| compute_ttft(&r.timeline).ok())),
        time_to_4_words_ms: mean(runs.iter().filter_map(|r| compute_time_to_n_words(&r.timeline, 4))),
        throughputs,
        energy_mj_per_token,
        correction_rate: None,
        prompt_tokens,
        generated_tokens,
        tokens_per_run: runs.iter().map(|r| r.sampled_tokens).collect(),
        measured_s,
        warnings,
    })
}
