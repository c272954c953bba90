use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_VOCAB_SIZE: usize = 12_288;
pub const DEFAULT_MAX_SEQ_LEN: usize = 1024;
pub const DEFAULT_ROPE_THETA: f64 = 1e6;
pub const DEFAULT_NORM_EPS: f64 = 1e-5;
pub const DEFAULT_N_HEADS: usize = 8;
pub const DEFAULT_N_KV_HEADS: usize = 2;

/// The five published variants as `(hidden_size, n_layers)`.
pub const REFERENCE_VARIANTS: [(usize, usize); 5] = [(256, 8), (256, 16), (384, 8), (384, 16), (512, 8)];

/// Architecture hyperparameters of one model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub hidden_size: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub n_kv_heads: usize,
    pub head_dim: usize,
    pub intermediate_size: usize,
    pub vocab_size: usize,
    pub max_seq_len: usize,
    pub rope_theta: f64,
    pub norm_eps: f64,
}

/// Smallest multiple of 64 that is at least `ceil(8d/3)`.
pub fn ffn_intermediate_size(hidden_size: usize) -> usize {
    let base = (8 * hidden_size).div_ceil(3);
    base.div_ceil(64) * 64
}

impl ModelConfig {
    /// A published-family geometry: 8 query heads, 2 KV heads, 12,288 vocab.
    pub fn variant(hidden_size: usize, n_layers: usize) -> Result<Self> {
        Self::with_geometry(
            hidden_size,
            n_layers,
            DEFAULT_N_HEADS,
            DEFAULT_N_KV_HEADS,
            DEFAULT_VOCAB_SIZE,
            DEFAULT_MAX_SEQ_LEN,
        )
    }

    pub fn with_geometry(
        hidden_size: usize,
        n_layers: usize,
        n_heads: usize,
        n_kv_heads: usize,
        vocab_size: usize,
        max_seq_len: usize,
    ) -> Result<Self> {
        if n_heads == 0 || !hidden_size.is_multiple_of(n_heads) {
            return Err(Error::Config(format!(
                "hidden size {hidden_size} is not divisible by {n_heads} heads"
            )));
        }
        let config = Self {
            hidden_size,
            n_layers,
            n_heads,
            n_kv_heads,
            head_dim: hidden_size / n_heads,
            intermediate_size: ffn_intermediate_size(hidden_size),
            vocab_size,
            max_seq_len,
            rope_theta: DEFAULT_ROPE_THETA,
            norm_eps: DEFAULT_NORM_EPS,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.hidden_size == 0 || self.n_layers == 0 || self.vocab_size == 0 || self.max_seq_len == 0 {
            return bad(format!("all sizes must be positive: {self:?}"));
        }
        if self.n_heads == 0 || self.n_kv_heads == 0 || self.head_dim == 0 {
            return bad("head counts and head_dim must be positive".into());
        }
        if self.hidden_size != self.n_heads * self.head_dim {
            return bad(format!(
                "hidden_size {} != n_heads {} × head_dim {}",
                self.hidden_size, self.n_heads, self.head_dim
            ));
        }
        if self.n_kv_heads > self.n_heads || !self.n_heads.is_multiple_of(self.n_kv_heads) {
            return bad(format!(
                "n_heads {} must be a multiple of n_kv_heads {}",
                self.n_heads, self.n_kv_heads
            ));
        }
        if !self.head_dim.is_multiple_of(2) {
            return bad(format!("head_dim {} must be even for rotary embeddings", self.head_dim));
        }
        let m = ffn_intermediate_size(self.hidden_size);
        if self.intermediate_size != m {
            return bad(format!(
                "intermediate_size {} must be {m} for hidden size {}",
                self.intermediate_size, self.hidden_size
            ));
        }
        if !(self.rope_theta.is_finite() && self.rope_theta > 0.0) {
            return bad("rope_theta must be positive".into());
        }
        if !(self.norm_eps.is_finite() && self.norm_eps > 0.0) {
            return bad("norm_eps must be positive".into());
        }
        Ok(())
    }

    /// True for the vocabulary, context and rotary base used by the published family.
    pub fn is_reference_geometry(&self) -> bool {
        self.vocab_size == DEFAULT_VOCAB_SIZE
            && self.max_seq_len == DEFAULT_MAX_SEQ_LEN
            && self.rope_theta == DEFAULT_ROPE_THETA
    }

    #[inline]
    pub fn q_dim(&self) -> usize {
        self.n_heads * self.head_dim
    }

    #[inline]
    pub fn kv_dim(&self) -> usize {
        self.n_kv_heads * self.head_dim
    }

    /// Query heads served by each KV head.
    #[inline]
    pub fn group_size(&self) -> usize {
        self.n_heads / self.n_kv_heads
    }

    pub fn name(&self) -> String {
        format!("uLM-{}-{}", self.hidden_size, self.n_layers)
    }
}

/// Trainable parameters with the output head tied to the token embedding.
pub fn param_count(config: &ModelConfig) -> u64 {
    let d = config.hidden_size as u64;
    let q = config.q_dim() as u64;
    let kv = config.kv_dim() as u64;
    let m = config.intermediate_size as u64;
    let per_layer = 2 * d + d * q + 2 * d * kv + q * d + 3 * d * m;
    config.vocab_size as u64 * d + config.n_layers as u64 * per_layer + d
}

/// Millions with two decimals, as used in the published size labels.
///
/// The count is first rounded to the nearest thousand parameters, so
/// 28,844,544 is labelled `28.85`.
pub fn format_millions(count: u64) -> String {
    let thousands = (count + 500) / 1000;
    let hundredths = (thousands + 5) / 10;
    format!("{}.{:02}", hundredths / 100, hundredths % 100)
}

/// Optimizer steps for a model of `params` parameters under a fixed
/// `FLOPs ∝ N·D` budget anchored at `(ref_params, ref_steps)`.
pub fn compute_step_budget(params: u64, ref_params: u64, ref_steps: u64) -> Result<u64> {
    if params == 0 || ref_params == 0 || ref_steps == 0 {
        return Err(Error::Domain("step budget inputs must be positive".into()));
    }
    let num = ref_steps as u128 * ref_params as u128;
    let den = params as u128;
    // round half up
    Ok(((2 * num + den) / (2 * den)) as u64)
}
