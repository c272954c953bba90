use std::path::Path;
use std::sync::Arc;

use mulm_core::model::{load_weights, param_count, Model};
use mulm_core::tokenizer::TokenizerModel;

use crate::error::{CliError, CliResult};

/// A loaded model and its tokenizer, shared across sessions.
#[derive(Clone)]
pub struct Engine {
    pub model: Arc<Model>,
    pub tokenizer: Arc<TokenizerModel>,
}

impl Engine {
    pub fn new(model: Model, tokenizer: TokenizerModel) -> CliResult<Self> {
        let vocab = model.config().vocab_size;
        if tokenizer.vocab_size() != vocab {
            return Err(CliError::Config(format!(
                "tokenizer has {} entries but the model expects {vocab}",
                tokenizer.vocab_size()
            )));
        }
        if tokenizer.end_id().is_none() {
            return Err(CliError::Config("tokenizer has no end marker".into()));
        }
        Ok(Self {
            model: Arc::new(model),
            tokenizer: Arc::new(tokenizer),
        })
    }

    pub fn load(weights: &Path, tokenizer: &Path) -> CliResult<Self> {
        let file = std::fs::File::open(weights)
            .map_err(|e| CliError::Config(format!("cannot open {}: {e}", weights.display())))?;
        let (header, w) = load_weights(&mut std::io::BufReader::new(file))?;
        let tok = TokenizerModel::load(tokenizer)
            .map_err(|e| CliError::Config(format!("{}: {e}", tokenizer.display())))?;
        for (name, id) in &header.special_tokens {
            if tok.special_id(name) != Some(*id) {
                return Err(CliError::Config(format!(
                    "weights expect {name} at id {id}, tokenizer has {:?}",
                    tok.special_id(name)
                )));
            }
        }
        Self::new(Model::new(header.config, w)?, tok)
    }

    pub fn describe(&self) -> serde_json::Value {
        let config = self.model.config();
        serde_json::json!({
            "name": config.name(),
            "param_count": param_count(config),
            "config": config,
        })
    }
}
