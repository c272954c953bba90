#![allow(dead_code)]

use std::path::Path;

use mulm_cli::engine::Engine;
use mulm_core::model::{Model, ModelConfig, Weights};
use mulm_core::tokenizer::{train_bpe, TokenizerModel};

pub const CORPUS: &str = "What if Vincent van Gogh had been a successful artist during his lifetime? \
Vincent van Gogh was a significant figure in the development of modern art. \
How old is the Space Needle? The Space Needle opened in 1962 for the World's Fair.";

pub fn tokenizer() -> TokenizerModel {
    train_bpe(&[CORPUS, CORPUS], 320).unwrap()
}

pub fn tiny_config(vocab: usize) -> ModelConfig {
    ModelConfig::with_geometry(32, 2, 4, 2, vocab, 256).unwrap()
}

pub fn engine(seed: u64) -> Engine {
    let tok = tokenizer();
    let config = tiny_config(tok.vocab_size());
    let model = Model::new(config.clone(), Weights::random(&config, seed)).unwrap();
    Engine::new(model, tok).unwrap()
}

/// Writes a tokenizer and matching random weights into `dir`.
pub fn write_assets(dir: &Path, seed: u64) -> (std::path::PathBuf, std::path::PathBuf) {
    let tok = tokenizer();
    let tok_path = dir.join("tokenizer.json");
    tok.save(&tok_path).unwrap();
    let weights_path = dir.join("weights.mulm");
    mulm_cli::commands::init_model(&tiny_config(tok.vocab_size()), &tok, seed, &weights_path).unwrap();
    (weights_path, tok_path)
}
