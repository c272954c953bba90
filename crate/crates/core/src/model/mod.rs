//! The decoder-only transformer: configuration, weights and the container
//! format, and cached autoregressive inference.

mod config;
mod forward;
mod weights;

pub use config::{
    compute_step_budget, ffn_intermediate_size, format_millions, param_count, ModelConfig, DEFAULT_NORM_EPS,
    DEFAULT_MAX_SEQ_LEN, DEFAULT_N_HEADS, DEFAULT_N_KV_HEADS, DEFAULT_ROPE_THETA, REFERENCE_VARIANTS, DEFAULT_VOCAB_SIZE,
};
pub use forward::{grouped_query_attention, KVCache, Model};
pub use weights::{
    load_weights, save_weights, tensor_manifest, ContainerHeader, LayerWeights, TensorEntry, Weights, ALIGNMENT,
    FORMAT_VERSION, MAGIC,
};
