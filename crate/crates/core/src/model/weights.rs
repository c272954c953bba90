//! Weight tensors and the `MULM` binary container.
//!
//! Layout: `MULM` | version u32 LE | header length u32 LE | JSON header |
//! zero padding | f32 LE tensor payloads. Every payload starts at a 64-byte
//! aligned absolute file offset recorded in the header manifest.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{param_count, ModelConfig};
use crate::error::{Error, Result};
use crate::tensor::Tensor2D;

pub const MAGIC: &[u8; 4] = b"MULM";
pub const FORMAT_VERSION: u32 = 1;
pub const ALIGNMENT: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub struct LayerWeights {
    pub attn_norm: Vec<f32>,
    pub wq: Tensor2D,
    pub wk: Tensor2D,
    pub wv: Tensor2D,
    pub wo: Tensor2D,
    pub ffn_norm: Vec<f32>,
    pub w_gate: Tensor2D,
    pub w_up: Tensor2D,
    pub w_down: Tensor2D,
}

/// All trainable tensors. There is no output head: logits use the
/// transposed token embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct Weights {
    pub tok_embedding: Tensor2D,
    pub layers: Vec<LayerWeights>,
    pub final_norm: Vec<f32>,
}

enum TensorRef<'a> {
    Matrix(&'a Tensor2D),
    Vector(&'a [f32]),
}

impl TensorRef<'_> {
    fn shape(&self) -> Vec<usize> {
        match self {
            TensorRef::Matrix(t) => vec![t.rows(), t.cols()],
            TensorRef::Vector(v) => vec![v.len()],
        }
    }

    fn data(&self) -> &[f32] {
        match self {
            TensorRef::Matrix(t) => t.data(),
            TensorRef::Vector(v) => v,
        }
    }
}

/// Canonical tensor names and shapes, in storage order.
pub fn tensor_manifest(config: &ModelConfig) -> Vec<(String, Vec<usize>)> {
    let d = config.hidden_size;
    let m = config.intermediate_size;
    let mut out = vec![("tok_embedding".to_string(), vec![config.vocab_size, d])];
    for i in 0..config.n_layers {
        let p = format!("layers.{i}.");
        out.push((format!("{p}attn_norm"), vec![d]));
        out.push((format!("{p}wq"), vec![d, config.q_dim()]));
        out.push((format!("{p}wk"), vec![d, config.kv_dim()]));
        out.push((format!("{p}wv"), vec![d, config.kv_dim()]));
        out.push((format!("{p}wo"), vec![config.q_dim(), d]));
        out.push((format!("{p}ffn_norm"), vec![d]));
        out.push((format!("{p}w_gate"), vec![d, m]));
        out.push((format!("{p}w_up"), vec![d, m]));
        out.push((format!("{p}w_down"), vec![m, d]));
    }
    out.push(("final_norm".to_string(), vec![d]));
    out
}

impl Weights {
    /// Every tensor set to zero except unit norm gains.
    pub fn zeros(config: &ModelConfig) -> Self {
        Self::build(config, |_| 0.0)
    }

    /// Uniform `±1/sqrt(fan_in)` initialisation with unit norm gains.
    pub fn random(config: &ModelConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::build(config, move |fan_in| {
            let a = 1.0 / (fan_in as f32).sqrt();
            rng.random_range(-a..a)
        })
    }

    fn build(config: &ModelConfig, mut init: impl FnMut(usize) -> f32) -> Self {
        let d = config.hidden_size;
        let m = config.intermediate_size;
        let mut mat = |rows: usize, cols: usize, fan_in: usize| Tensor2D::from_fn(rows, cols, |_, _| init(fan_in));
        let tok_embedding = mat(config.vocab_size, d, d);
        let layers = (0..config.n_layers)
            .map(|_| LayerWeights {
                attn_norm: vec![1.0; d],
                wq: mat(d, config.q_dim(), d),
                wk: mat(d, config.kv_dim(), d),
                wv: mat(d, config.kv_dim(), d),
                wo: mat(config.q_dim(), d, config.q_dim()),
                ffn_norm: vec![1.0; d],
                w_gate: mat(d, m, d),
                w_up: mat(d, m, d),
                w_down: mat(m, d, m),
            })
            .collect();
        Self {
            tok_embedding,
            layers,
            final_norm: vec![1.0; d],
        }
    }

    fn tensors(&self) -> Vec<TensorRef<'_>> {
        let mut out = vec![TensorRef::Matrix(&self.tok_embedding)];
        for l in &self.layers {
            out.push(TensorRef::Vector(&l.attn_norm));
            out.push(TensorRef::Matrix(&l.wq));
            out.push(TensorRef::Matrix(&l.wk));
            out.push(TensorRef::Matrix(&l.wv));
            out.push(TensorRef::Matrix(&l.wo));
            out.push(TensorRef::Vector(&l.ffn_norm));
            out.push(TensorRef::Matrix(&l.w_gate));
            out.push(TensorRef::Matrix(&l.w_up));
            out.push(TensorRef::Matrix(&l.w_down));
        }
        out.push(TensorRef::Vector(&self.final_norm));
        out
    }

    pub fn total_elements(&self) -> u64 {
        self.tensors().iter().map(|t| t.data().len() as u64).sum()
    }

    /// Checks every tensor shape against the config.
    pub fn check_shapes(&self, config: &ModelConfig) -> Result<()> {
        if self.layers.len() != config.n_layers {
            return Err(Error::Integrity(format!(
                "{} layers for a config with {}",
                self.layers.len(),
                config.n_layers
            )));
        }
        for ((name, shape), t) in tensor_manifest(config).iter().zip(self.tensors()) {
            if &t.shape() != shape {
                return Err(Error::Integrity(format!(
                    "tensor {name} has shape {:?}, expected {shape:?}",
                    t.shape()
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContainerHeader {
    #[serde(flatten)]
    pub config: ModelConfig,
    pub param_count: u64,
    /// Reserved chat-marker ids, so a tokenizer can be checked against the weights.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub special_tokens: BTreeMap<String, u32>,
    pub tensors: Vec<TensorEntry>,
}

fn align(n: usize) -> usize {
    n.div_ceil(ALIGNMENT) * ALIGNMENT
}

fn layout(config: &ModelConfig, payload_start: usize) -> (Vec<TensorEntry>, usize) {
    let mut offset = payload_start;
    let mut entries = Vec::new();
    for (name, shape) in tensor_manifest(config) {
        let bytes = shape.iter().product::<usize>() * 4;
        entries.push(TensorEntry {
            name,
            shape,
            offset: offset as u64,
        });
        offset = align(offset + bytes);
    }
    (entries, offset)
}

/// Serialises `config` and `weights` into the container format.
pub fn save_weights<W: Write>(
    out: &mut W,
    config: &ModelConfig,
    weights: &Weights,
    special_tokens: &BTreeMap<String, u32>,
) -> Result<()> {
    config.validate()?;
    weights.check_shapes(config)?;

    // Offsets are absolute, so the header length feeds back into them.
    let mut payload_start = 0;
    let (header_bytes, entries) = loop {
        let (entries, _) = layout(config, payload_start);
        let header = ContainerHeader {
            config: config.clone(),
            param_count: param_count(config),
            special_tokens: special_tokens.clone(),
            tensors: entries.clone(),
        };
        let bytes = serde_json::to_vec(&header)?;
        let start = align(12 + bytes.len());
        if start == payload_start {
            break (bytes, entries);
        }
        payload_start = start;
    };

    let mut buf = Vec::with_capacity(payload_start);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(header_bytes.len() as u32).to_le_bytes());
    buf.extend_from_slice(&header_bytes);
    for (entry, tensor) in entries.iter().zip(weights.tensors()) {
        buf.resize(entry.offset as usize, 0);
        for v in tensor.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    out.write_all(&buf)?;
    Ok(())
}

/// Parses a container, verifying magic, manifest, shapes and the declared count.
pub fn load_weights<R: Read>(input: &mut R) -> Result<(ContainerHeader, Weights)> {
    let mut prefix = [0u8; 12];
    input.read_exact(&mut prefix)?;
    if &prefix[0..4] != MAGIC {
        return Err(Error::Format(format!("bad magic {:?}", &prefix[0..4])));
    }
    let version = u32::from_le_bytes(prefix[4..8].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported container version {version}")));
    }
    let header_len = u32::from_le_bytes(prefix[8..12].try_into().unwrap()) as usize;
    let mut header_bytes = vec![0u8; header_len];
    input.read_exact(&mut header_bytes)?;
    let header: ContainerHeader =
        serde_json::from_slice(&header_bytes).map_err(|e| Error::Format(format!("header: {e}")))?;
    let config = &header.config;
    config.validate()?;

    let expected = param_count(config);
    if header.param_count != expected {
        return Err(Error::Integrity(format!(
            "header declares {} parameters, config implies {expected}",
            header.param_count
        )));
    }
    let manifest = tensor_manifest(config);
    if header.tensors.len() != manifest.len() {
        return Err(Error::Integrity(format!(
            "manifest lists {} tensors, expected {}",
            header.tensors.len(),
            manifest.len()
        )));
    }
    let declared: u64 = header
        .tensors
        .iter()
        .map(|t| t.shape.iter().product::<usize>() as u64)
        .sum();
    if declared != expected {
        return Err(Error::Integrity(format!(
            "manifest shapes hold {declared} parameters, expected {expected}"
        )));
    }

    let mut cursor = 12 + header_len;
    let mut read_tensor = |entry: &TensorEntry, name: &str, shape: &[usize]| -> Result<Vec<f32>> {
        if entry.name != name || entry.shape != shape {
            return Err(Error::Integrity(format!(
                "manifest entry {} {:?} where {name} {shape:?} was expected",
                entry.name, entry.shape
            )));
        }
        let offset = entry.offset as usize;
        if !offset.is_multiple_of(ALIGNMENT) || offset < cursor {
            return Err(Error::Integrity(format!("tensor {name} at bad offset {offset}")));
        }
        std::io::copy(&mut input.by_ref().take((offset - cursor) as u64), &mut std::io::sink())?;
        let n = shape.iter().product::<usize>();
        let mut raw = vec![0u8; n * 4];
        input.read_exact(&mut raw)?;
        cursor = offset + n * 4;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    };

    let mut entries = header.tensors.iter().zip(manifest.iter());
    let mut next_vec = || -> Result<Vec<f32>> {
        let (entry, (name, shape)) = entries.next().expect("manifest length checked");
        read_tensor(entry, name, shape)
    };
    let next_mat = |rows: usize, cols: usize, data: Vec<f32>| Tensor2D::new(rows, cols, data);

    let d = config.hidden_size;
    let m = config.intermediate_size;
    let tok_embedding = next_mat(config.vocab_size, d, next_vec()?)?;
    let mut layers = Vec::with_capacity(config.n_layers);
    for _ in 0..config.n_layers {
        layers.push(LayerWeights {
            attn_norm: next_vec()?,
            wq: next_mat(d, config.q_dim(), next_vec()?)?,
            wk: next_mat(d, config.kv_dim(), next_vec()?)?,
            wv: next_mat(d, config.kv_dim(), next_vec()?)?,
            wo: next_mat(config.q_dim(), d, next_vec()?)?,
            ffn_norm: next_vec()?,
            w_gate: next_mat(d, m, next_vec()?)?,
            w_up: next_mat(d, m, next_vec()?)?,
            w_down: next_mat(m, d, next_vec()?)?,
        });
    }
    let final_norm = next_vec()?;
    let weights = Weights {
        tok_embedding,
        layers,
        final_norm,
    };
    if weights.total_elements() != expected {
        return Err(Error::Integrity("payload element count mismatch".into()));
    }
    Ok((header, weights))
}
