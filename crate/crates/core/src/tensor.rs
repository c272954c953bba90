//! Dense f32 kernels for the inference forward pass.
//!
//! Every reduction sums sequentially in index order, so results are
//! bit-identical across calls with the same inputs.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-major 2-D tensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor2D {
    rows: usize,
    cols: usize,
    data: Vec<f32>,
}

impl Tensor2D {
    pub fn new(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Dimension(format!(
                "tensor data length {} does not match {rows}x{cols}",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(n, n);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f32] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f32 {
        self.data[r * self.cols + c]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Standard matrix product `a · b`.
pub fn matmul(a: &Tensor2D, b: &Tensor2D) -> Result<Tensor2D> {
    if a.cols != b.rows {
        return Err(Error::Dimension(format!(
            "matmul: {}x{} · {}x{}",
            a.rows, a.cols, b.rows, b.cols
        )));
    }
    let mut out = Tensor2D::zeros(a.rows, b.cols);
    for r in 0..a.rows {
        let dst = &mut out.data[r * b.cols..(r + 1) * b.cols];
        accumulate_vec_mat(a.row(r), b, dst);
    }
    Ok(out)
}

/// Row vector times matrix: `x · w`, with `x.len() == w.rows()`.
pub fn vec_mat(x: &[f32], w: &Tensor2D) -> Result<Vec<f32>> {
    if x.len() != w.rows {
        return Err(Error::Dimension(format!(
            "vec_mat: vector of {} · {}x{}",
            x.len(),
            w.rows,
            w.cols
        )));
    }
    let mut out = vec![0.0; w.cols];
    accumulate_vec_mat(x, w, &mut out);
    Ok(out)
}

// out[j] = sum_i x[i] * w[i][j], summed in increasing i for every j.
fn accumulate_vec_mat(x: &[f32], w: &Tensor2D, out: &mut [f32]) {
    for (i, &xi) in x.iter().enumerate() {
        let row = w.row(i);
        for (o, &wij) in out.iter_mut().zip(row) {
            *o += xi * wij;
        }
    }
}

/// Dot product of every row of `m` with `x`: `m · xᵀ`.
pub fn mat_vec_rows(m: &Tensor2D, x: &[f32]) -> Result<Vec<f32>> {
    if x.len() != m.cols {
        return Err(Error::Dimension(format!(
            "mat_vec_rows: {}x{} against vector of {}",
            m.rows,
            m.cols,
            x.len()
        )));
    }
    Ok((0..m.rows).map(|r| dot(m.row(r), x)).collect())
}

#[inline]
pub fn dot(a: &[f32], b: &[f32]) -> f32 {
    let mut acc = 0.0f32;
    for (x, y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

/// Root-mean-square normalization with a learned per-channel gain.
pub fn rmsnorm(x: &[f32], gain: &[f32], eps: f32) -> Result<Vec<f32>> {
    if x.len() != gain.len() {
        return Err(Error::Dimension(format!(
            "rmsnorm: input of {} with gain of {}",
            x.len(),
            gain.len()
        )));
    }
    if x.is_empty() {
        return Ok(Vec::new());
    }
    let mut sum_sq = 0.0f32;
    for v in x {
        sum_sq += v * v;
    }
    let inv = 1.0 / (sum_sq / x.len() as f32 + eps).sqrt();
    Ok(x.iter().zip(gain).map(|(v, g)| g * v * inv).collect())
}

/// Rotates consecutive pairs `(v[2i], v[2i+1])` by `position · theta^(-2i/d)`.
pub fn apply_rope(vec: &[f32], position: usize, theta: f32) -> Result<Vec<f32>> {
    let mut out = vec.to_vec();
    apply_rope_in_place(&mut out, position, theta)?;
    Ok(out)
}

pub fn apply_rope_in_place(vec: &mut [f32], position: usize, theta: f32) -> Result<()> {
    let head_dim = vec.len();
    if !head_dim.is_multiple_of(2) {
        return Err(Error::Config(format!("rope needs an even head dim, got {head_dim}")));
    }
    let pos = position as f64;
    for i in 0..head_dim / 2 {
        let freq = (theta as f64).powf(-2.0 * i as f64 / head_dim as f64);
        let (sin, cos) = (pos * freq).sin_cos();
        let (sin, cos) = (sin as f32, cos as f32);
        let a = vec[2 * i];
        let b = vec[2 * i + 1];
        vec[2 * i] = a * cos - b * sin;
        vec[2 * i + 1] = a * sin + b * cos;
    }
    Ok(())
}

#[inline]
pub fn silu(z: f32) -> f32 {
    z / (1.0 + (-z).exp())
}

/// Gated feed-forward: `down(silu(gate(x)) ⊙ up(x))`.
///
/// `w_gate` and `w_up` are `d × m`, `w_down` is `m × d`.
pub fn swiglu_ffn(x: &[f32], w_gate: &Tensor2D, w_up: &Tensor2D, w_down: &Tensor2D) -> Result<Vec<f32>> {
    if w_gate.shape() != w_up.shape() || w_down.rows != w_gate.cols || w_down.cols != w_gate.rows {
        return Err(Error::Dimension(format!(
            "swiglu: gate {:?}, up {:?}, down {:?}",
            w_gate.shape(),
            w_up.shape(),
            w_down.shape()
        )));
    }
    let gate = vec_mat(x, w_gate)?;
    let up = vec_mat(x, w_up)?;
    let hidden: Vec<f32> = gate.iter().zip(&up).map(|(g, u)| silu(*g) * u).collect();
    vec_mat(&hidden, w_down)
}

/// Numerically stable softmax (max-subtracted).
pub fn softmax(x: &[f32]) -> Vec<f32> {
    let mut out = x.to_vec();
    softmax_in_place(&mut out);
    out
}

pub fn softmax_in_place(x: &mut [f32]) {
    if x.is_empty() {
        return;
    }
    let max = x.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let mut sum = 0.0f32;
    for v in x.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in x.iter_mut() {
        *v /= sum;
    }
}
