//! The auxiliary subcommands.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use mulm_core::dedup::{flag_contaminated, sliding_window_views, DedupParams, Document};
use mulm_core::model::{format_millions, param_count, save_weights, ModelConfig, Weights, REFERENCE_VARIANTS};
use mulm_core::tokenizer::{train_bpe, TokenizerModel};
use serde::Serialize;

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ParamRow {
    pub name: String,
    pub hidden_size: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub n_kv_heads: usize,
    pub intermediate_size: usize,
    pub vocab_size: usize,
    pub params: u64,
    pub millions: String,
}

impl ParamRow {
    pub fn from_config(config: &ModelConfig) -> Self {
        let params = param_count(config);
        Self {
            name: config.name(),
            hidden_size: config.hidden_size,
            n_layers: config.n_layers,
            n_heads: config.n_heads,
            n_kv_heads: config.n_kv_heads,
            intermediate_size: config.intermediate_size,
            vocab_size: config.vocab_size,
            params,
            millions: format!("{}M", format_millions(params)),
        }
    }
}

/// The published variants, followed by `extra` when given.
pub fn param_rows(extra: Option<&ModelConfig>) -> CliResult<Vec<ParamRow>> {
    let mut rows = Vec::new();
    for &(d, l) in &REFERENCE_VARIANTS {
        rows.push(ParamRow::from_config(&ModelConfig::variant(d, l)?));
    }
    if let Some(c) = extra {
        rows.push(ParamRow::from_config(c));
    }
    Ok(rows)
}

fn group_thousands(n: u64) -> String {
    let s = n.to_string();
    let mut out = String::new();
    for (i, c) in s.chars().enumerate() {
        if i > 0 && (s.len() - i).is_multiple_of(3) {
            out.push(',');
        }
        out.push(c);
    }
    out
}

pub fn write_param_table<W: Write>(rows: &[ParamRow], out: &mut W) -> std::io::Result<()> {
    writeln!(out, "{:<12} {:>5} {:>6} {:>5} {:>4} {:>6} {:>12} {:>8}", "variant", "d", "layers", "heads", "kv", "ffn", "params", "size")?;
    for r in rows {
        writeln!(
            out,
            "{:<12} {:>5} {:>6} {:>5} {:>4} {:>6} {:>12} {:>8}",
            r.name,
            r.hidden_size,
            r.n_layers,
            r.n_heads,
            r.n_kv_heads,
            r.intermediate_size,
            group_thousands(r.params),
            r.millions
        )?;
    }
    Ok(())
}

fn read_text(path: &Path) -> CliResult<String> {
    std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))
}

/// Trains a tokenizer, one corpus entry per input file.
pub fn tokenizer_train(inputs: &[PathBuf], vocab_size: usize, out: &Path) -> CliResult<TokenizerModel> {
    if inputs.is_empty() {
        return Err(CliError::Usage("at least one --input file is required".into()));
    }
    let corpus = inputs.iter().map(|p| read_text(p)).collect::<CliResult<Vec<_>>>()?;
    let tok = train_bpe(&corpus, vocab_size).map_err(|e| CliError::Config(e.to_string()))?;
    tok.save(out)?;
    Ok(tok)
}

/// Writes randomly initialised weights sized to `tokenizer`.
pub fn init_model(config: &ModelConfig, tokenizer: &TokenizerModel, seed: u64, out: &Path) -> CliResult<()> {
    let weights = Weights::random(config, seed);
    let specials: BTreeMap<String, u32> = tokenizer.special_tokens().clone();
    let mut w = BufWriter::new(File::create(out)?);
    save_weights(&mut w, config, &weights, &specials)?;
    w.flush()?;
    Ok(())
}

/// Reads newline-delimited `{id, text}` records.
pub fn read_documents(path: &Path) -> CliResult<Vec<Document>> {
    let file = File::open(path).map_err(|e| CliError::Config(format!("cannot open {}: {e}", path.display())))?;
    let mut docs = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let doc: Document = serde_json::from_str(&line)
            .map_err(|e| CliError::Config(format!("{}:{}: {e}", path.display(), i + 1)))?;
        docs.push(doc);
    }
    Ok(docs)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ViewSplit {
    pub window: usize,
    pub stride: usize,
}

pub fn dedup(
    eval: &Path,
    train: &[PathBuf],
    params: &DedupParams,
    split: Option<ViewSplit>,
) -> CliResult<Vec<mulm_core::dedup::ContaminationFlag>> {
    params.validate().map_err(|e| CliError::Config(e.to_string()))?;
    let eval_docs = read_documents(eval)?;
    let mut views = Vec::new();
    for path in train {
        for doc in read_documents(path)? {
            match split {
                Some(s) => views.extend(sliding_window_views(&doc, s.window, s.stride)?),
                None => views.push(doc),
            }
        }
    }
    Ok(flag_contaminated(&eval_docs, &views, params)?)
}
