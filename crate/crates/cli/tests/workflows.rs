mod common;

use mulm_cli::bench::{run_bench, BenchProtocol, EnergyLog};
use mulm_cli::chat::{answer_standalone, run_chat, ChatOptions};
use mulm_core::decoder::{SamplingPolicy, WordBudget};
use mulm_core::metrics::ManualClock;
use mulm_handoff::{CloudError, RecoveryMode, ScriptedContinuator};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn protocol(window_s: f64) -> BenchProtocol {
    BenchProtocol {
        prompt: "What if Vincent van Gogh had been a successful artist?".into(),
        warmup: 2,
        window_s,
        max_tokens: 16,
    }
}

#[test]
fn bench_counts_runs_inside_the_window() {
    let engine = common::engine(2);
    let mut csv = Vec::new();
    let report = run_bench(&engine, &protocol(2.0), None, &ManualClock::ticking(0.0, 1.0), Some(&mut csv)).unwrap();
    assert!(report.runs > 0);
    assert!(report.warnings.is_empty());
    assert!(report.measured_s <= 2.0);
    assert_eq!(report.tokens_per_run.len(), report.runs);
    assert!(report.tokens_per_run.windows(2).all(|w| w[0] == w[1]));
    assert_eq!(report.generated_tokens, report.tokens_per_run.iter().sum::<usize>() as u64);
    let csv = String::from_utf8(csv).unwrap();
    assert_eq!(csv.lines().next(), Some("run,token,t_ms"));
    let rows = csv.lines().count() - 1;
    assert!(rows > 0 && rows <= report.generated_tokens as usize);
    let tp = report.throughputs.unwrap();
    assert!(tp.generation > 0.0 && tp.prompt > 0.0 && tp.end_to_end > 0.0);
}

#[test]
fn bench_window_shorter_than_a_run_warns() {
    let engine = common::engine(2);
    let report = run_bench(&engine, &protocol(0.001), None, &ManualClock::ticking(0.0, 1.0), None).unwrap();
    assert_eq!(report.runs, 0);
    assert_eq!(report.warnings.len(), 1);
    assert!(report.ttft_ms.is_none());
}

#[test]
fn bench_energy_per_token() {
    let engine = common::engine(2);
    let energy = EnergyLog {
        energy_before_mj: 0.0,
        energy_after_mj: 10_000.0,
        idle_power_mw: 0.0,
    };
    let report = run_bench(&engine, &protocol(2.0), Some(energy), &ManualClock::ticking(0.0, 1.0), None).unwrap();
    let per_token = report.energy_mj_per_token.unwrap();
    assert!((per_token - 10_000.0 / report.generated_tokens as f64).abs() < 1e-9);
}

#[test]
fn bench_rejects_bad_protocols() {
    let engine = common::engine(2);
    let clock = ManualClock::ticking(0.0, 1.0);
    assert_eq!(run_bench(&engine, &protocol(0.0), None, &clock, None).unwrap_err().exit_code(), std::process::ExitCode::from(2));
    let mut p = protocol(1.0);
    p.max_tokens = 0;
    assert!(run_bench(&engine, &p, None, &clock, None).is_err());
}

fn options() -> ChatOptions {
    ChatOptions {
        word_budget: WordBudget::new(4).unwrap(),
        mode: RecoveryMode::ExplicitCorrection,
        policy: SamplingPolicy::greedy(24),
        seed: 0,
    }
}

#[tokio::test]
async fn chat_without_cloud_matches_standalone() {
    let engine = common::engine(7);
    let mut out = Vec::new();
    run_chat(&engine, None, &options(), "How old is the Space Needle?\n/quit\nignored\n".as_bytes(), &mut out)
        .await
        .unwrap();
    let mut expected = Vec::new();
    let clock = ManualClock::new(0.0);
    answer_standalone(
        &engine,
        "How old is the Space Needle?",
        SamplingPolicy::greedy(24),
        &mut ChaCha8Rng::seed_from_u64(0),
        &clock,
        &mut expected,
    )
    .unwrap();
    expected.push(b'\n');
    assert_eq!(out, expected);
}

#[tokio::test]
async fn chat_stitches_the_continuation() {
    let engine = common::engine(7);
    let cloud = ScriptedContinuator::new(["the development", " of modern art."]);
    let mut out = Vec::new();
    run_chat(&engine, Some(&cloud), &options(), "Tell me about van Gogh\n".as_bytes(), &mut out)
        .await
        .unwrap();
    let text = String::from_utf8(out).unwrap();
    assert!(text.ends_with("the development of modern art.\n"), "{text:?}");
}

#[tokio::test]
async fn chat_degrades_after_cloud_failure() {
    let engine = common::engine(7);
    let cloud = ScriptedContinuator::new(["partial"]).failing_after(
        1,
        CloudError::Transport {
            message: "connection reset".into(),
            partial: String::new(),
        },
    );
    let mut out = Vec::new();
    run_chat(&engine, Some(&cloud), &options(), "first\nsecond\n".as_bytes(), &mut out)
        .await
        .unwrap();
    let text = String::from_utf8(out).unwrap();
    assert_eq!(text.matches("[cloud unavailable:").count(), 1, "{text:?}");
    assert_eq!(cloud.calls().len(), 1);
}
