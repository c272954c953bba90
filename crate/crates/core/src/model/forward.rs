use super::config::ModelConfig;
use super::weights::Weights;
use crate::error::{Error, Result};
use crate::tensor::{apply_rope_in_place, dot, mat_vec_rows, rmsnorm, softmax_in_place, swiglu_ffn, vec_mat};

/// Per-layer cached keys and values, one row of `kv_dim` per position.
#[derive(Debug, Clone)]
pub struct KVCache {
    keys: Vec<Vec<f32>>,
    values: Vec<Vec<f32>>,
    kv_dim: usize,
    len: usize,
    max_len: usize,
}

impl KVCache {
    pub fn new(config: &ModelConfig) -> Self {
        Self {
            keys: vec![Vec::new(); config.n_layers],
            values: vec![Vec::new(); config.n_layers],
            kv_dim: config.kv_dim(),
            len: 0,
            max_len: config.max_seq_len,
        }
    }

    pub fn current_len(&self) -> usize {
        self.len
    }

    pub fn max_len(&self) -> usize {
        self.max_len
    }

    pub fn is_full(&self) -> bool {
        self.len >= self.max_len
    }

    pub fn n_layers(&self) -> usize {
        self.keys.len()
    }

    /// Cached keys of `layer`, `current_len × kv_dim` row-major.
    pub fn layer_keys(&self, layer: usize) -> &[f32] {
        &self.keys[layer]
    }

    pub fn layer_values(&self, layer: usize) -> &[f32] {
        &self.values[layer]
    }

    pub fn clear(&mut self) {
        for (k, v) in self.keys.iter_mut().zip(&mut self.values) {
            k.clear();
            v.clear();
        }
        self.len = 0;
    }

    pub fn truncate(&mut self, len: usize) {
        if len >= self.len {
            return;
        }
        for (k, v) in self.keys.iter_mut().zip(&mut self.values) {
            k.truncate(len * self.kv_dim);
            v.truncate(len * self.kv_dim);
        }
        self.len = len;
    }
}

/// Grouped-query attention for a single query position.
///
/// `query` holds `n_heads × head_dim` values; `keys`/`values` hold one row
/// of `n_kv_heads × head_dim` per attended position. Query head `h` reads
/// KV head `h / (n_heads / n_kv_heads)`.
pub fn grouped_query_attention(
    query: &[f32],
    keys: &[f32],
    values: &[f32],
    n_heads: usize,
    n_kv_heads: usize,
    head_dim: usize,
) -> Result<Vec<f32>> {
    let kv_dim = n_kv_heads * head_dim;
    if n_kv_heads == 0 || !n_heads.is_multiple_of(n_kv_heads) {
        return Err(Error::Config(format!("{n_heads} heads over {n_kv_heads} kv heads")));
    }
    if query.len() != n_heads * head_dim || keys.len() != values.len() || !keys.len().is_multiple_of(kv_dim) {
        return Err(Error::Dimension(format!(
            "attention: query {}, keys {}, values {}",
            query.len(),
            keys.len(),
            values.len()
        )));
    }
    let positions = keys.len() / kv_dim;
    let group = n_heads / n_kv_heads;
    let scale = 1.0 / (head_dim as f32).sqrt();
    let mut out = vec![0.0f32; n_heads * head_dim];
    let mut scores = vec![0.0f32; positions];
    for h in 0..n_heads {
        let kv = h / group;
        let q = &query[h * head_dim..(h + 1) * head_dim];
        for (t, s) in scores.iter_mut().enumerate() {
            let k = &keys[t * kv_dim + kv * head_dim..t * kv_dim + (kv + 1) * head_dim];
            *s = dot(q, k) * scale;
        }
        softmax_in_place(&mut scores);
        let o = &mut out[h * head_dim..(h + 1) * head_dim];
        for (t, &w) in scores.iter().enumerate() {
            let v = &values[t * kv_dim + kv * head_dim..t * kv_dim + (kv + 1) * head_dim];
            for (oi, vi) in o.iter_mut().zip(v) {
                *oi += w * vi;
            }
        }
    }
    Ok(out)
}

/// A loaded model. Immutable, so one instance can serve many sessions.
#[derive(Debug, Clone)]
pub struct Model {
    config: ModelConfig,
    weights: Weights,
}

impl Model {
    pub fn new(config: ModelConfig, weights: Weights) -> Result<Self> {
        config.validate()?;
        weights.check_shapes(&config)?;
        Ok(Self { config, weights })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn weights(&self) -> &Weights {
        &self.weights
    }

    pub fn new_cache(&self) -> KVCache {
        KVCache::new(&self.config)
    }

    /// Runs the prompt through the model and returns the next-token logits
    /// for the last position together with the filled cache.
    pub fn prefill(&self, tokens: &[u32]) -> Result<(Vec<f32>, KVCache)> {
        if tokens.is_empty() {
            return Err(Error::Domain("prefill needs at least one token".into()));
        }
        self.check_fits(tokens.len())?;
        let mut cache = self.new_cache();
        let mut hidden = Vec::new();
        for &t in tokens {
            hidden = self.forward_token(t, &mut cache)?;
        }
        Ok((self.logits(&hidden)?, cache))
    }

    /// Debug variant of [`Model::prefill`] exposing logits at every position.
    pub fn prefill_all_logits(&self, tokens: &[u32]) -> Result<Vec<Vec<f32>>> {
        if tokens.is_empty() {
            return Err(Error::Domain("prefill needs at least one token".into()));
        }
        self.check_fits(tokens.len())?;
        let mut cache = self.new_cache();
        tokens
            .iter()
            .map(|&t| {
                let h = self.forward_token(t, &mut cache)?;
                self.logits(&h)
            })
            .collect()
    }

    /// Appends one position to the cache and returns the next-token logits.
    pub fn decode_step(&self, token: u32, cache: &mut KVCache) -> Result<Vec<f32>> {
        if cache.is_full() {
            return Err(Error::ContextOverflow {
                len: cache.current_len() + 1,
                max: cache.max_len(),
            });
        }
        let h = self.forward_token(token, cache)?;
        self.logits(&h)
    }

    fn check_fits(&self, len: usize) -> Result<()> {
        if len > self.config.max_seq_len {
            return Err(Error::ContextOverflow {
                len,
                max: self.config.max_seq_len,
            });
        }
        Ok(())
    }

    /// Tied head: `final_norm(h) · Eᵀ`.
    pub fn logits(&self, hidden: &[f32]) -> Result<Vec<f32>> {
        let normed = rmsnorm(hidden, &self.weights.final_norm, self.config.norm_eps as f32)?;
        mat_vec_rows(&self.weights.tok_embedding, &normed)
    }

    // One pre-norm decoder pass for the token at position `cache.current_len()`.
    fn forward_token(&self, token: u32, cache: &mut KVCache) -> Result<Vec<f32>> {
        let c = &self.config;
        if token as usize >= c.vocab_size {
            return Err(Error::Domain(format!("token id {token} outside vocabulary of {}", c.vocab_size)));
        }
        let pos = cache.len;
        let eps = c.norm_eps as f32;
        let theta = c.rope_theta as f32;
        let mut h = self.weights.tok_embedding.row(token as usize).to_vec();

        for (l, layer) in self.weights.layers.iter().enumerate() {
            let x = rmsnorm(&h, &layer.attn_norm, eps)?;
            let mut q = vec_mat(&x, &layer.wq)?;
            let mut k = vec_mat(&x, &layer.wk)?;
            let v = vec_mat(&x, &layer.wv)?;
            for head in q.chunks_exact_mut(c.head_dim) {
                apply_rope_in_place(head, pos, theta)?;
            }
            for head in k.chunks_exact_mut(c.head_dim) {
                apply_rope_in_place(head, pos, theta)?;
            }
            cache.keys[l].extend_from_slice(&k);
            cache.values[l].extend_from_slice(&v);

            let attn = grouped_query_attention(&q, &cache.keys[l], &cache.values[l], c.n_heads, c.n_kv_heads, c.head_dim)?;
            let proj = vec_mat(&attn, &layer.wo)?;
            for (hi, p) in h.iter_mut().zip(&proj) {
                *hi += p;
            }

            let x = rmsnorm(&h, &layer.ffn_norm, eps)?;
            let ffn = swiglu_ffn(&x, &layer.w_gate, &layer.w_up, &layer.w_down)?;
            for (hi, f) in h.iter_mut().zip(&ffn) {
                *hi += f;
            }
        }
        cache.len += 1;
        Ok(h)
    }
}
