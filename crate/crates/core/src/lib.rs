//! Local inference for the micro language model family: dense kernels, the
//! decoder-only transformer with grouped-query attention and a KV cache, a
//! byte-level BPE tokenizer with a chat template, word-budgeted opener
//! generation, latency/energy metrics and a MinHash contamination checker.

pub mod decoder;
pub mod dedup;
mod error;
pub mod metrics;
pub mod model;
pub mod tensor;
pub mod tokenizer;

pub use error::{Error, Result};
