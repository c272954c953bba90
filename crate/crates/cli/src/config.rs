//! Service configuration: one JSON file plus command-line overrides.

use std::path::{Path, PathBuf};

use mulm_core::decoder::{WordBudget, MAX_WORD_BUDGET};
use mulm_handoff::{CloudEndpointConfig, RecoveryMode};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

pub const DEFAULT_WORD_BUDGET: usize = 4;
pub const DEFAULT_LISTEN: &str = "127.0.0.1:8080";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServiceConfig {
    pub weights: PathBuf,
    pub tokenizer: PathBuf,
    pub cloud: CloudEndpointConfig,
    pub word_budget: usize,
    pub mode: RecoveryMode,
    pub listen: String,
    pub log_level: String,
    /// Upper bound on opener tokens per request.
    pub max_tokens: usize,
    pub temperature: f32,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            weights: PathBuf::from("weights.mulm"),
            tokenizer: PathBuf::from("tokenizer.json"),
            cloud: CloudEndpointConfig::default(),
            word_budget: DEFAULT_WORD_BUDGET,
            mode: RecoveryMode::default(),
            listen: DEFAULT_LISTEN.into(),
            log_level: "info".into(),
            max_tokens: 64,
            temperature: 0.0,
        }
    }
}

impl ServiceConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    pub fn budget(&self) -> CliResult<WordBudget> {
        WordBudget::new(self.word_budget).map_err(|e| CliError::Config(e.to_string()))
    }

    /// Checks values and that referenced files exist.
    pub fn validate(&self) -> CliResult<()> {
        if !(1..=MAX_WORD_BUDGET).contains(&self.word_budget) {
            return Err(CliError::Config(format!(
                "word_budget {} outside 1..={MAX_WORD_BUDGET}",
                self.word_budget
            )));
        }
        if self.max_tokens == 0 {
            return Err(CliError::Config("max_tokens must be positive".into()));
        }
        if !(self.temperature.is_finite() && self.temperature >= 0.0) {
            return Err(CliError::Config("temperature must be non-negative".into()));
        }
        self.cloud.validate().map_err(|e| CliError::Config(e.to_string()))?;
        for (what, path) in [("weights", &self.weights), ("tokenizer", &self.tokenizer)] {
            if !path.is_file() {
                return Err(CliError::Config(format!("{what} file {} does not exist", path.display())));
            }
        }
        Ok(())
    }
}
