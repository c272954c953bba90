//! `mulm`: chat, serve, benchmark and tooling for micro language models.

pub mod bench;
pub mod chat;
pub mod commands;
pub mod config;
pub mod engine;
mod error;
pub mod serve;

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use mulm_core::decoder::SamplingPolicy;
use mulm_core::dedup::{DedupParams, DEFAULT_BANDS, DEFAULT_HASHES, DEFAULT_K, DEFAULT_SEED, DEFAULT_THRESHOLD};
use mulm_core::metrics::MonotonicClock;
use mulm_core::model::{ModelConfig, DEFAULT_MAX_SEQ_LEN, DEFAULT_N_HEADS, DEFAULT_N_KV_HEADS, DEFAULT_VOCAB_SIZE};
use mulm_core::tokenizer::TokenizerModel;
use mulm_handoff::{Continuator, HttpContinuator, RecoveryMode};

pub use error::{CliError, CliResult};

use crate::bench::{BenchProtocol, EnergyLog};
use crate::commands::ViewSplit;
use crate::config::ServiceConfig;
use crate::engine::Engine;

#[derive(Debug, Parser)]
#[command(name = "mulm", version, about = "Micro language model response initiation with cloud continuation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Interactive chat: local opener, then the cloud continuation.
    Chat(ChatArgs),
    /// Serve the streaming HTTP API.
    Serve(ServeArgs),
    /// Fixed-window latency and throughput benchmark.
    Bench(BenchArgs),
    /// Parameter counts of the published variants and an optional geometry.
    ParamCount(ParamCountArgs),
    /// Train a byte-level BPE tokenizer.
    TokenizerTrain(TokenizerTrainArgs),
    /// Write randomly initialised weights for a geometry.
    InitModel(InitModelArgs),
    /// Flag evaluation prompts contained in training text.
    Dedup(DedupArgs),
}

#[derive(Debug, Clone, Args)]
pub struct ServiceArgs {
    /// JSON configuration file; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub weights: Option<PathBuf>,
    #[arg(long)]
    pub tokenizer: Option<PathBuf>,
    /// Continuator base URL, e.g. http://host:8000/v1.
    #[arg(long)]
    pub cloud_url: Option<String>,
    #[arg(long)]
    pub cloud_model: Option<String>,
    #[arg(long)]
    pub timeout_ms: Option<u64>,
    /// Opener word budget (1-32).
    #[arg(long)]
    pub budget: Option<usize>,
    /// Recovery mode: explicit, natural or humor.
    #[arg(long)]
    pub mode: Option<RecoveryMode>,
    #[arg(long)]
    pub max_tokens: Option<usize>,
    #[arg(long)]
    pub temperature: Option<f32>,
}

impl ServiceArgs {
    pub fn resolve(&self) -> CliResult<ServiceConfig> {
        let mut c = match &self.config {
            Some(p) => ServiceConfig::load(p)?,
            None => ServiceConfig::default(),
        };
        if let Some(v) = &self.weights {
            c.weights = v.clone();
        }
        if let Some(v) = &self.tokenizer {
            c.tokenizer = v.clone();
        }
        if let Some(v) = &self.cloud_url {
            c.cloud.base_url = v.clone();
        }
        if let Some(v) = &self.cloud_model {
            c.cloud.model = v.clone();
        }
        if let Some(v) = self.timeout_ms {
            c.cloud.timeout_ms = v;
        }
        if let Some(v) = self.budget {
            c.word_budget = v;
        }
        if let Some(v) = self.mode {
            c.mode = v;
        }
        if let Some(v) = self.max_tokens {
            c.max_tokens = v;
        }
        if let Some(v) = self.temperature {
            c.temperature = v;
        }
        c.validate()?;
        Ok(c)
    }
}

#[derive(Debug, Args)]
pub struct ChatArgs {
    #[command(flatten)]
    pub service: ServiceArgs,
    /// Answer with the local model only, without a word budget.
    #[arg(long)]
    pub no_cloud: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[command(flatten)]
    pub service: ServiceArgs,
    #[arg(long)]
    pub listen: Option<String>,
    #[arg(long)]
    pub log_level: Option<String>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long)]
    pub weights: PathBuf,
    #[arg(long)]
    pub tokenizer: PathBuf,
    #[arg(long, default_value = bench::DEFAULT_PROMPT)]
    pub prompt: String,
    /// Measurement window in seconds.
    #[arg(long, default_value_t = 90.0)]
    pub window: f64,
    #[arg(long, default_value_t = 3)]
    pub warmup: usize,
    #[arg(long, default_value_t = 64)]
    pub max_tokens: usize,
    /// Where to write the JSON report; stdout when absent.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Per-token timestamps as CSV.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// JSON meter readings: energy_before_mj, energy_after_mj, idle_power_mw.
    #[arg(long)]
    pub energy_log: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ParamCountArgs {
    #[arg(long)]
    pub d: Option<usize>,
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long, default_value_t = DEFAULT_N_HEADS)]
    pub heads: usize,
    #[arg(long, default_value_t = DEFAULT_N_KV_HEADS)]
    pub kv_heads: usize,
    #[arg(long, default_value_t = DEFAULT_VOCAB_SIZE)]
    pub vocab: usize,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct TokenizerTrainArgs {
    #[arg(long = "input", required = true)]
    pub inputs: Vec<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_VOCAB_SIZE)]
    pub vocab_size: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct InitModelArgs {
    #[arg(long)]
    pub tokenizer: PathBuf,
    #[arg(long, default_value_t = 256)]
    pub d: usize,
    #[arg(long, default_value_t = 8)]
    pub layers: usize,
    #[arg(long, default_value_t = DEFAULT_N_HEADS)]
    pub heads: usize,
    #[arg(long, default_value_t = DEFAULT_N_KV_HEADS)]
    pub kv_heads: usize,
    #[arg(long, default_value_t = DEFAULT_MAX_SEQ_LEN)]
    pub max_seq: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct DedupArgs {
    /// Newline-delimited JSON {id, text}.
    #[arg(long)]
    pub eval: PathBuf,
    #[arg(long, required = true, num_args = 1..)]
    pub train: Vec<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_K)]
    pub k: usize,
    #[arg(long, default_value_t = DEFAULT_HASHES)]
    pub hashes: usize,
    #[arg(long, default_value_t = DEFAULT_BANDS)]
    pub bands: usize,
    #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
    pub threshold: f64,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
    /// Split training documents into windows of this many words.
    #[arg(long)]
    pub window: Option<usize>,
    #[arg(long, requires = "window")]
    pub stride: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn init_logging(level: &str) {
    let filter = tracing_subscriber::EnvFilter::try_new(level).unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("info"));
    let _ = tracing_subscriber::fmt().with_env_filter(filter).with_writer(std::io::stderr).try_init();
}

fn runtime() -> CliResult<tokio::runtime::Runtime> {
    tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| CliError::Runtime(e.to_string()))
}

fn write_output(path: Option<&PathBuf>, text: &str) -> CliResult<()> {
    match path {
        Some(p) => std::fs::write(p, text)?,
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes())?;
            out.flush()?;
        }
    }
    Ok(())
}

pub fn execute(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Chat(args) => {
            let config = args.service.resolve()?;
            let engine = Engine::load(&config.weights, &config.tokenizer)?;
            let continuator = if args.no_cloud {
                None
            } else {
                Some(HttpContinuator::new(config.cloud.clone()).map_err(|e| CliError::Config(e.to_string()))?)
            };
            let options = chat::ChatOptions {
                word_budget: config.budget()?,
                mode: config.mode,
                policy: SamplingPolicy {
                    temperature: config.temperature,
                    max_tokens: config.max_tokens,
                },
                seed: args.seed,
            };
            let stdin = std::io::stdin().lock();
            let mut stdout = std::io::stdout();
            runtime()?.block_on(chat::run_chat(
                &engine,
                continuator.as_ref().map(|c| c as &dyn Continuator),
                &options,
                stdin,
                &mut stdout,
            ))
        }
        Command::Serve(args) => {
            let mut config = args.service.resolve()?;
            if let Some(l) = args.listen {
                config.listen = l;
            }
            if let Some(l) = args.log_level {
                config.log_level = l;
            }
            init_logging(&config.log_level);
            let engine = Engine::load(&config.weights, &config.tokenizer)?;
            let continuator =
                Arc::new(HttpContinuator::new(config.cloud.clone()).map_err(|e| CliError::Config(e.to_string()))?);
            let listen = config.listen.clone();
            let state = serve::AppState::new(engine, continuator, Arc::new(MonotonicClock::new()), config);
            runtime()?
                .block_on(serve::serve(state, &listen))
                .map_err(|e| CliError::Runtime(format!("server on {listen}: {e}")))
        }
        Command::Bench(args) => {
            let engine = Engine::load(&args.weights, &args.tokenizer)?;
            let energy = args.energy_log.as_deref().map(EnergyLog::load).transpose()?;
            let protocol = BenchProtocol {
                prompt: args.prompt,
                warmup: args.warmup,
                window_s: args.window,
                max_tokens: args.max_tokens,
            };
            let mut csv = args.csv.as_ref().map(std::fs::File::create).transpose()?;
            let report = bench::run_bench(
                &engine,
                &protocol,
                energy,
                &MonotonicClock::new(),
                csv.as_mut().map(|f| f as &mut dyn Write),
            )?;
            for w in &report.warnings {
                eprintln!("warning: {w}");
            }
            write_output(args.report.as_ref(), &(serde_json::to_string_pretty(&report)? + "\n"))
        }
        Command::ParamCount(args) => {
            let extra = match (args.d, args.layers) {
                (None, None) => None,
                (d, l) => Some(ModelConfig::with_geometry(
                    d.unwrap_or(256),
                    l.unwrap_or(8),
                    args.heads,
                    args.kv_heads,
                    args.vocab,
                    DEFAULT_MAX_SEQ_LEN,
                )?),
            };
            let rows = commands::param_rows(extra.as_ref())?;
            if args.json {
                write_output(None, &(serde_json::to_string_pretty(&rows)? + "\n"))
            } else {
                commands::write_param_table(&rows, &mut std::io::stdout().lock())?;
                Ok(())
            }
        }
        Command::TokenizerTrain(args) => {
            let tok = commands::tokenizer_train(&args.inputs, args.vocab_size, &args.out)?;
            eprintln!(
                "wrote {} ({} entries, {} merges)",
                args.out.display(),
                tok.vocab_size(),
                tok.merges().len()
            );
            Ok(())
        }
        Command::InitModel(args) => {
            let tok = TokenizerModel::load(&args.tokenizer)
                .map_err(|e| CliError::Config(format!("{}: {e}", args.tokenizer.display())))?;
            let config = ModelConfig::with_geometry(
                args.d,
                args.layers,
                args.heads,
                args.kv_heads,
                tok.vocab_size(),
                args.max_seq,
            )?;
            commands::init_model(&config, &tok, args.seed, &args.out)?;
            eprintln!("wrote {} ({})", args.out.display(), config.name());
            Ok(())
        }
        Command::Dedup(args) => {
            let params = DedupParams {
                k: args.k,
                hashes: args.hashes,
                bands: args.bands,
                threshold: args.threshold,
                seed: args.seed,
            };
            let split = args.window.map(|window| ViewSplit {
                window,
                stride: args.stride.unwrap_or(window.div_ceil(2)),
            });
            let flags = commands::dedup(&args.eval, &args.train, &params, split)?;
            eprintln!("{} flagged pairs", flags.len());
            write_output(args.out.as_ref(), &(serde_json::to_string_pretty(&flags)? + "\n"))
        }
    }
}

/// Parses arguments and runs, mapping failures to exit codes
/// (1 usage, 2 configuration, 3 runtime).
pub fn run<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
