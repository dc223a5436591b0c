//! Three-layer perceptron classifier trained with plain SGD.
//!
//! ```text
//! probs = softmax(W3 · relu(W2 · relu(W1 · x + b1) + b2) + b3)
//! ```
//!
//! with hidden widths 128 and 64 and two output classes. All arithmetic is
//! `f64`. The loss is the batch *mean* of the per-sample cross-entropy, so it
//! equals the summed form divided by the batch size `B`; gradients are scaled
//! accordingly. The output gradient uses the fused `(probs - one_hot) / B`.
//!
//! Parameter vectors are flattened in the order `W1, b1, W2, b2, W3, b3`, each
//! matrix row-major (`out x in`).

use std::io::{Read, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::{stream, Purpose};

pub const HIDDEN1: usize = 128;
pub const HIDDEN2: usize = 64;
pub const CLASSES: usize = 2;

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"FMLP";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite values in {0}")]
    NonFinite(&'static str),
    #[error("invalid learning rate {0}")]
    InvalidLearningRate(f64),
    #[error("label {label} at batch row {row} is not 0 or 1")]
    BadLabel { row: usize, label: u8 },
    #[error("flat parameter vector has length {found}, expected {expected}")]
    LengthMismatch { expected: usize, found: usize },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, NnError>;

/// Number of trainable parameters for input width `d`: `128d + 8514`.
pub const fn param_count(d: usize) -> usize {
    HIDDEN1 * d + HIDDEN1 + HIDDEN2 * HIDDEN1 + HIDDEN2 + CLASSES * HIDDEN2 + CLASSES
}

/// Weights and biases of the network. Matrices are row-major `out x in`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    d: usize,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
    pub w3: Vec<f64>,
    pub b3: Vec<f64>,
}

/// Gradient of the loss with respect to every tensor of [`MlpParams`],
/// stored with identical shapes.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients(MlpParams);

impl MlpParams {
    pub fn zeros(d: usize) -> Self {
        Self {
            d,
            w1: vec![0.0; HIDDEN1 * d],
            b1: vec![0.0; HIDDEN1],
            w2: vec![0.0; HIDDEN2 * HIDDEN1],
            b2: vec![0.0; HIDDEN2],
            w3: vec![0.0; CLASSES * HIDDEN2],
            b3: vec![0.0; CLASSES],
        }
    }

    pub fn input_dim(&self) -> usize {
        self.d
    }

    pub fn param_count(&self) -> usize {
        param_count(self.d)
    }

    /// The six tensors in flatten order.
    pub fn tensors(&self) -> [&[f64]; 6] {
        [&self.w1, &self.b1, &self.w2, &self.b2, &self.w3, &self.b3]
    }

    pub fn tensors_mut(&mut self) -> [&mut Vec<f64>; 6] {
        [&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2, &mut self.w3, &mut self.b3]
    }

    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.tensors().into_iter().flat_map(|t| t.iter().copied())
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> + '_ {
        self.tensors_mut().into_iter().flat_map(|t| t.iter_mut())
    }

    pub fn is_finite(&self) -> bool {
        self.values().all(f64::is_finite)
    }

    /// Shapes are fully determined by `d`, so congruence is equality of `d`
    /// plus correct tensor lengths.
    pub fn check_congruent(&self, other: &MlpParams) -> Result<()> {
        if self.d != other.d {
            return Err(NnError::Shape(format!("input width {} vs {}", self.d, other.d)));
        }
        self.check_lengths()?;
        other.check_lengths()
    }

    fn check_lengths(&self) -> Result<()> {
        let reference = MlpParams::zeros(0);
        let expected = [HIDDEN1 * self.d, HIDDEN1, reference.w2.len(), HIDDEN2, reference.w3.len(), CLASSES];
        for (t, e) in self.tensors().iter().zip(expected) {
            if t.len() != e {
                return Err(NnError::Shape(format!("tensor of length {} where {e} expected", t.len())));
            }
        }
        Ok(())
    }

    /// `self -= lr * grads`, in place.
    pub(crate) fn descend(&mut self, grads: &Gradients, lr: f64) {
        for (p, g) in self.tensors_mut().into_iter().zip(grads.0.tensors()) {
            for (x, dx) in p.iter_mut().zip(g) {
                *x -= lr * dx;
            }
        }
    }
}

impl Gradients {
    pub fn params(&self) -> &MlpParams {
        &self.0
    }

    pub fn into_params(self) -> MlpParams {
        self.0
    }

    pub fn flatten(&self) -> Vec<f64> {
        flatten(&self.0)
    }

    pub fn is_finite(&self) -> bool {
        self.0.is_finite()
    }
}

/// Zero biases; weights uniform on `[-sqrt(6/fan_in), sqrt(6/fan_in))`, which
/// gives each weight variance `2 / fan_in`.
pub fn init_params(d: usize, seed: u64) -> MlpParams {
    let mut rng = stream(seed, Purpose::Init, 0, 0);
    let mut params = MlpParams::zeros(d);
    for (w, fan_in) in [(&mut params.w1, d), (&mut params.w2, HIDDEN1), (&mut params.w3, HIDDEN2)] {
        let limit = (6.0 / fan_in as f64).sqrt();
        for x in w.iter_mut() {
            *x = rng.gen_range(-limit..limit);
        }
    }
    params
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4 * 4;
    for (ca, cb) in a[..chunks].chunks_exact(4).zip(b[..chunks].chunks_exact(4)) {
        acc[0] += ca[0] * cb[0];
        acc[1] += ca[1] * cb[1];
        acc[2] += ca[2] * cb[2];
        acc[3] += ca[3] * cb[3];
    }
    let mut tail = 0.0;
    for (x, y) in a[chunks..].iter().zip(&b[chunks..]) {
        tail += x * y;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[inline]
fn axpy(y: &mut [f64], alpha: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// `out[b, o] = bias[o] + <x[b, :], w[o, :]>`.
fn affine(x: &[f64], in_dim: usize, w: &[f64], bias: &[f64]) -> Vec<f64> {
    let out_dim = bias.len();
    let batch = x.len() / in_dim;
    let mut out = Vec::with_capacity(batch * out_dim);
    for row in x.chunks_exact(in_dim) {
        for (o, w_row) in w.chunks_exact(in_dim).enumerate() {
            out.push(bias[o] + dot(row, w_row));
        }
    }
    out
}

fn relu(z: &[f64]) -> Vec<f64> {
    z.iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect()
}

/// Result of a forward pass: class probabilities plus the activations the
/// backward pass needs.
#[derive(Debug, Clone)]
pub struct Forward {
    batch: usize,
    d: usize,
    inputs: Vec<f64>,
    z1: Vec<f64>,
    a1: Vec<f64>,
    z2: Vec<f64>,
    a2: Vec<f64>,
    logits: Vec<f64>,
    probs: Vec<f64>,
}

impl Forward {
    pub fn batch_size(&self) -> usize {
        self.batch
    }

    /// `B x 2`, row-major.
    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn logits(&self) -> &[f64] {
        &self.logits
    }

    /// Probability of class 1 for every row.
    pub fn positive_scores(&self) -> Vec<f64> {
        self.probs.chunks_exact(CLASSES).map(|p| p[1]).collect()
    }

    /// Mean cross-entropy computed from the logits with log-sum-exp, so it
    /// stays finite even when a probability underflows to zero.
    pub fn loss(&self, labels: &[u8]) -> Result<f64> {
        check_labels(labels, self.batch)?;
        let mut total = 0.0;
        for (row, &y) in self.logits.chunks_exact(CLASSES).zip(labels) {
            let m = row[0].max(row[1]);
            let lse = m + ((row[0] - m).exp() + (row[1] - m).exp()).ln();
            total += lse - row[y as usize];
        }
        Ok(total / self.batch as f64)
    }
}

fn check_labels(labels: &[u8], batch: usize) -> Result<()> {
    if labels.len() != batch {
        return Err(NnError::Shape(format!("{} labels for a batch of {batch}", labels.len())));
    }
    if let Some(row) = labels.iter().position(|&y| y as usize >= CLASSES) {
        return Err(NnError::BadLabel { row, label: labels[row] });
    }
    Ok(())
}

/// Runs the network on a row-major `B x d` input matrix.
pub fn forward(params: &MlpParams, inputs: &[f64]) -> Result<Forward> {
    let d = params.d;
    if d == 0 || inputs.is_empty() || !inputs.len().is_multiple_of(d) {
        return Err(NnError::Shape(format!("{} input values do not form rows of width {d}", inputs.len())));
    }
    if !inputs.iter().all(|x| x.is_finite()) {
        return Err(NnError::NonFinite("inputs"));
    }
    let batch = inputs.len() / d;
    let z1 = affine(inputs, d, &params.w1, &params.b1);
    let a1 = relu(&z1);
    let z2 = affine(&a1, HIDDEN1, &params.w2, &params.b2);
    let a2 = relu(&z2);
    let logits = affine(&a2, HIDDEN2, &params.w3, &params.b3);
    let mut probs = Vec::with_capacity(logits.len());
    for row in logits.chunks_exact(CLASSES) {
        let m = row[0].max(row[1]);
        let e0 = (row[0] - m).exp();
        let e1 = (row[1] - m).exp();
        let s = e0 + e1;
        probs.push(e0 / s);
        probs.push(e1 / s);
    }
    Ok(Forward { batch, d, inputs: inputs.to_vec(), z1, a1, z2, a2, logits, probs })
}

/// Mean negative log-likelihood of the true class. Probabilities are floored
/// at the smallest positive normal so a zero never reaches `ln`.
pub fn loss_ce(probs: &[f64], labels: &[u8]) -> Result<f64> {
    if probs.len() != labels.len() * CLASSES || labels.is_empty() {
        return Err(NnError::Shape(format!("{} probabilities for {} labels", probs.len(), labels.len())));
    }
    if !probs.iter().all(|p| p.is_finite()) {
        return Err(NnError::NonFinite("probabilities"));
    }
    check_labels(labels, labels.len())?;
    let total: f64 =
        probs.chunks_exact(CLASSES).zip(labels).map(|(p, &y)| -p[y as usize].max(f64::MIN_POSITIVE).ln()).sum();
    Ok(total / labels.len() as f64)
}

/// Exact gradients of the mean cross-entropy of `cache` with respect to all
/// six tensors.
pub fn backward(params: &MlpParams, cache: &Forward, labels: &[u8]) -> Result<Gradients> {
    if cache.d != params.d {
        return Err(NnError::Shape(format!("cache built for width {}, params have {}", cache.d, params.d)));
    }
    let batch = cache.batch;
    check_labels(labels, batch)?;
    let scale = 1.0 / batch as f64;
    let mut g = MlpParams::zeros(params.d);

    let mut delta3 = cache.probs.clone();
    for (row, &y) in delta3.chunks_exact_mut(CLASSES).zip(labels) {
        row[y as usize] -= 1.0;
        row[0] *= scale;
        row[1] *= scale;
    }
    accumulate_layer(&mut g.w3, &mut g.b3, &delta3, &cache.a2, HIDDEN2);
    let delta2 = backprop_relu(&delta3, &params.w3, HIDDEN2, &cache.z2);
    accumulate_layer(&mut g.w2, &mut g.b2, &delta2, &cache.a1, HIDDEN1);
    let delta1 = backprop_relu(&delta2, &params.w2, HIDDEN1, &cache.z1);
    accumulate_layer(&mut g.w1, &mut g.b1, &delta1, &cache.inputs, params.d);
    Ok(Gradients(g))
}

/// `gw += delta^T · act`, `gb += column sums of delta`.
fn accumulate_layer(gw: &mut [f64], gb: &mut [f64], delta: &[f64], act: &[f64], in_dim: usize) {
    let out_dim = gb.len();
    for (d_row, a_row) in delta.chunks_exact(out_dim).zip(act.chunks_exact(in_dim)) {
        for (o, &dv) in d_row.iter().enumerate() {
            if dv != 0.0 {
                gb[o] += dv;
                axpy(&mut gw[o * in_dim..(o + 1) * in_dim], dv, a_row);
            }
        }
    }
}

/// Gradient with respect to the pre-activation `z` of the layer below:
/// `(delta · w) * [z > 0]`.
fn backprop_relu(delta: &[f64], w: &[f64], in_dim: usize, z: &[f64]) -> Vec<f64> {
    let out_dim = w.len() / in_dim;
    let mut out = vec![0.0; z.len()];
    for (o_row, d_row) in out.chunks_exact_mut(in_dim).zip(delta.chunks_exact(out_dim)) {
        for (o, &dv) in d_row.iter().enumerate() {
            if dv != 0.0 {
                axpy(o_row, dv, &w[o * in_dim..(o + 1) * in_dim]);
            }
        }
    }
    for (g, &zv) in out.iter_mut().zip(z) {
        if zv <= 0.0 {
            *g = 0.0;
        }
    }
    out
}

/// `params - lr * grads`, returned as a new value.
pub fn sgd_step(params: &MlpParams, grads: &Gradients, lr: f64) -> Result<MlpParams> {
    if !(lr >= 0.0 && lr.is_finite()) {
        return Err(NnError::InvalidLearningRate(lr));
    }
    params.check_congruent(&grads.0)?;
    if !grads.is_finite() {
        return Err(NnError::NonFinite("gradients"));
    }
    let mut next = params.clone();
    next.descend(grads, lr);
    if !next.is_finite() {
        return Err(NnError::NonFinite("updated parameters"));
    }
    Ok(next)
}

pub fn flatten(params: &MlpParams) -> Vec<f64> {
    let mut out = Vec::with_capacity(params.param_count());
    for t in params.tensors() {
        out.extend_from_slice(t);
    }
    out
}

pub fn unflatten(values: &[f64], d: usize) -> Result<MlpParams> {
    let expected = param_count(d);
    if values.len() != expected {
        return Err(NnError::LengthMismatch { expected, found: values.len() });
    }
    let mut params = MlpParams::zeros(d);
    let mut offset = 0;
    for t in params.tensors_mut() {
        let len = t.len();
        t.copy_from_slice(&values[offset..offset + len]);
        offset += len;
    }
    Ok(params)
}

/// Writes the 16-byte header (`FMLP`, version, d, reserved) followed by the
/// flattened parameters as little-endian `f64`.
pub fn write_checkpoint<W: Write>(params: &MlpParams, mut w: W) -> Result<()> {
    let d = u32::try_from(params.d).map_err(|_| NnError::Checkpoint(format!("d = {} exceeds u32", params.d)))?;
    w.write_all(&CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    w.write_all(&d.to_le_bytes())?;
    w.write_all(&0u32.to_le_bytes())?;
    for x in params.values() {
        w.write_all(&x.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<MlpParams> {
    let mut header = [0u8; 16];
    r.read_exact(&mut header)?;
    if header[..4] != CHECKPOINT_MAGIC {
        return Err(NnError::Checkpoint("bad magic".into()));
    }
    let word = |i: usize| u32::from_le_bytes(header[i..i + 4].try_into().expect("4 bytes"));
    let version = word(4);
    if version != CHECKPOINT_VERSION {
        return Err(NnError::Checkpoint(format!("unsupported version {version}")));
    }
    let d = word(8) as usize;
    let mut body = Vec::new();
    r.read_to_end(&mut body)?;
    if body.len() != param_count(d) * 8 {
        return Err(NnError::Checkpoint(format!(
            "body holds {} bytes, d = {d} needs {}",
            body.len(),
            param_count(d) * 8
        )));
    }
    let values: Vec<f64> = body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
    unflatten(&values, d)
}
