//! Independent reference implementations used to check the inference path.
//!
//! Everything here recomputes from scratch in f64 over the whole sequence,
//! with no cache, no shared kernels and an explicit causal mask.

#![allow(dead_code)]

use mulm_core::model::{ModelConfig, Weights};
use mulm_core::tensor::Tensor2D;

fn norm(x: &[f64], gain: &[f32], eps: f64) -> Vec<f64> {
    let ms = x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64;
    let inv = 1.0 / (ms + eps).sqrt();
    x.iter().zip(gain).map(|(v, g)| v * inv * *g as f64).collect()
}

fn project(x: &[f64], w: &Tensor2D) -> Vec<f64> {
    (0..w.cols())
        .map(|j| (0..w.rows()).map(|i| x[i] * w.get(i, j) as f64).sum())
        .collect()
}

fn rotate(head: &mut [f64], pos: usize, theta: f64) {
    let d = head.len();
    for i in 0..d / 2 {
        let angle = pos as f64 / theta.powf(2.0 * i as f64 / d as f64);
        let (s, c) = angle.sin_cos();
        let (a, b) = (head[2 * i], head[2 * i + 1]);
        head[2 * i] = a * c - b * s;
        head[2 * i + 1] = a * s + b * c;
    }
}

/// Multi-head attention over all positions of one layer with a causal mask.
/// `kv_head_of(h)` picks the KV head serving query head `h`.
pub fn masked_attention(
    q: &[Vec<f64>],
    k: &[Vec<f64>],
    v: &[Vec<f64>],
    n_heads: usize,
    head_dim: usize,
    kv_head_of: impl Fn(usize) -> usize,
) -> Vec<Vec<f64>> {
    let n = q.len();
    let mut out = vec![vec![0.0; n_heads * head_dim]; n];
    for h in 0..n_heads {
        let kvh = kv_head_of(h);
        for i in 0..n {
            let qi = &q[i][h * head_dim..(h + 1) * head_dim];
            let mut scores = vec![f64::NEG_INFINITY; n];
            for j in 0..=i {
                let kj = &k[j][kvh * head_dim..(kvh + 1) * head_dim];
                scores[j] = qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>() / (head_dim as f64).sqrt();
            }
            let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
            let z: f64 = exps.iter().sum();
            for j in 0..=i {
                let vj = &v[j][kvh * head_dim..(kvh + 1) * head_dim];
                for t in 0..head_dim {
                    out[i][h * head_dim + t] += exps[j] / z * vj[t];
                }
            }
        }
    }
    out
}

/// Logits at every position by full recomputation.
pub fn full_recompute_logits(config: &ModelConfig, w: &Weights, tokens: &[u32]) -> Vec<Vec<f64>> {
    let hd = config.head_dim;
    let group = config.n_heads / config.n_kv_heads;
    let eps = config.norm_eps;
    let mut h: Vec<Vec<f64>> = tokens
        .iter()
        .map(|&t| w.tok_embedding.row(t as usize).iter().map(|v| *v as f64).collect())
        .collect();
    for layer in &w.layers {
        let x: Vec<Vec<f64>> = h.iter().map(|r| norm(r, &layer.attn_norm, eps)).collect();
        let mut q: Vec<Vec<f64>> = x.iter().map(|r| project(r, &layer.wq)).collect();
        let mut k: Vec<Vec<f64>> = x.iter().map(|r| project(r, &layer.wk)).collect();
        let v: Vec<Vec<f64>> = x.iter().map(|r| project(r, &layer.wv)).collect();
        for (pos, (qr, kr)) in q.iter_mut().zip(k.iter_mut()).enumerate() {
            for head in qr.chunks_mut(hd) {
                rotate(head, pos, config.rope_theta);
            }
            for head in kr.chunks_mut(hd) {
                rotate(head, pos, config.rope_theta);
            }
        }
        let attn = masked_attention(&q, &k, &v, config.n_heads, hd, |hh| hh / group);
        for (hr, a) in h.iter_mut().zip(&attn) {
            for (hi, p) in hr.iter_mut().zip(project(a, &layer.wo)) {
                *hi += p;
            }
        }
        for hr in h.iter_mut() {
            let x = norm(hr, &layer.ffn_norm, eps);
            let g = project(&x, &layer.w_gate);
            let u = project(&x, &layer.w_up);
            let mid: Vec<f64> = g.iter().zip(&u).map(|(g, u)| g / (1.0 + (-g).exp()) * u).collect();
            for (hi, f) in hr.iter_mut().zip(project(&mid, &layer.w_down)) {
                *hi += f;
            }
        }
    }
    h.iter()
        .map(|r| {
            let n = norm(r, &w.final_norm, eps);
            (0..config.vocab_size)
                .map(|t| w.tok_embedding.row(t).iter().zip(&n).map(|(e, x)| *e as f64 * x).sum())
                .collect()
        })
        .collect()
}

pub fn max_abs_diff(a: &[f32], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (*x as f64 - y).abs()).fold(0.0, f64::max)
}
