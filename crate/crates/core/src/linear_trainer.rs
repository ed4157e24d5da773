//! Linear softmax probe trained with label-smoothed cross-entropy and Adam.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feature_store::FeatureDataset;
use crate::seed::{self, mix64, tag};

pub const HEAD_MAGIC: &[u8; 8] = b"IBM2HEAD";
pub const HEAD_VERSION: u32 = 1;

/// Standard deviation of the initial weights.
pub const INIT_STD: f64 = 0.01;

/// Reference batch size of the linear learning-rate scaling rule.
pub const LR_REFERENCE_BATCH: f64 = 256.0;

/// A finite, indexable stream of labelled vectors.
pub trait ExampleSource: Sync {
    fn len(&self) -> usize;

    fn dim(&self) -> usize;

    /// Writes example `idx` into `out` (length `dim`) and returns its label.
    fn fill(&self, idx: usize, out: &mut [f64]) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl ExampleSource for FeatureDataset {
    fn len(&self) -> usize {
        FeatureDataset::len(self)
    }

    fn dim(&self) -> usize {
        FeatureDataset::dim(self)
    }

    fn fill(&self, idx: usize, out: &mut [f64]) -> usize {
        out.copy_from_slice(self.row(idx));
        self.label(idx)
    }
}

/// `C x d` weights plus a length-`C` bias.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearHead {
    dim: usize,
    classes: usize,
    weights: Vec<f64>,
    bias: Vec<f64>,
}

impl LinearHead {
    pub fn zeros(dim: usize, classes: usize) -> Self {
        LinearHead {
            dim,
            classes,
            weights: vec![0.0; dim * classes],
            bias: vec![0.0; classes],
        }
    }

    pub fn from_parts(dim: usize, classes: usize, weights: Vec<f64>, bias: Vec<f64>) -> Result<Self> {
        if dim == 0 || classes == 0 {
            return Err(Error::config("head needs d >= 1 and C >= 1"));
        }
        if weights.len() != dim * classes {
            return Err(Error::DimensionMismatch {
                expected: dim * classes,
                got: weights.len(),
            });
        }
        if bias.len() != classes {
            return Err(Error::DimensionMismatch {
                expected: classes,
                got: bias.len(),
            });
        }
        Ok(LinearHead {
            dim,
            classes,
            weights,
            bias,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    /// Row-major `C x d` weights.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn weight_row(&self, class: usize) -> &[f64] {
        &self.weights[class * self.dim..(class + 1) * self.dim]
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().chain(&self.bias).all(|v| v.is_finite())
    }

    fn check_dim(&self, got: usize) -> Result<()> {
        if got != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got,
            });
        }
        Ok(())
    }

    fn logits_into(&self, x: &[f64], out: &mut [f64]) {
        for (c, o) in out.iter_mut().enumerate() {
            *o = dot(self.weight_row(c), x) + self.bias[c];
        }
    }

    /// Arg-max class; ties go to the lowest index.
    fn predict_unchecked(&self, x: &[f64], scratch: &mut [f64]) -> usize {
        self.logits_into(x, scratch);
        argmax(scratch)
    }

    pub fn predict(&self, x: &[f64]) -> Result<usize> {
        self.check_dim(x.len())?;
        let mut scratch = vec![0.0; self.classes];
        Ok(self.predict_unchecked(x, &mut scratch))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(20 + 8 * (self.weights.len() + self.bias.len()));
        out.extend_from_slice(HEAD_MAGIC);
        out.extend_from_slice(&HEAD_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.classes as u32).to_le_bytes());
        for v in self.weights.iter().chain(&self.bias) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 8 || &bytes[..8] != HEAD_MAGIC {
            return Err(Error::BadMagic {
                expected: "IBM2HEAD",
            });
        }
        if bytes.len() < 20 {
            return Err(Error::TruncatedPayload("head header".into()));
        }
        let word = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap());
        let version = word(8);
        if version != HEAD_VERSION {
            return Err(Error::VersionMismatch {
                found: version,
                supported: HEAD_VERSION,
            });
        }
        let (dim, classes) = (word(12) as usize, word(16) as usize);
        let count = dim * classes + classes;
        let payload = &bytes[20..];
        if payload.len() != count * 8 {
            return Err(Error::TruncatedPayload(format!(
                "head payload has {} bytes, expected {}",
                payload.len(),
                count * 8
            )));
        }
        let mut values: Vec<f64> = payload
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
            .collect();
        let bias = values.split_off(dim * classes);
        LinearHead::from_parts(dim, classes, values, bias)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| Error::file(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::file(path, e))?;
        Self::from_bytes(&bytes)
    }
}

/// Dot product with four fixed accumulators; the summation order is fixed,
/// so results are reproducible bit for bit.
#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut tail = 0.0;
    for (x, y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Initial head: weights i.i.d. `N(0, 0.01^2)`, zero bias.
pub fn init_head(dim: usize, classes: usize, seed: u64) -> LinearHead {
    let mut rng = seed::rng(seed);
    let normal = Normal::new(0.0, INIT_STD).expect("valid std");
    let weights = (0..dim * classes).map(|_| normal.sample(&mut rng)).collect();
    LinearHead {
        dim,
        classes,
        weights,
        bias: vec![0.0; classes],
    }
}

/// `W x + b`.
pub fn logits(head: &LinearHead, x: &[f64]) -> Result<Vec<f64>> {
    head.check_dim(x.len())?;
    let mut out = vec![0.0; head.classes];
    head.logits_into(x, &mut out);
    Ok(out)
}

fn log_sum_exp(z: &[f64]) -> f64 {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

pub fn softmax(z: &[f64]) -> Vec<f64> {
    let mut out = z.to_vec();
    softmax_in_place(&mut out);
    out
}

fn softmax_in_place(z: &mut [f64]) {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in z.iter_mut() {
        *v = (*v - m).exp();
        sum += *v;
    }
    for v in z.iter_mut() {
        *v /= sum;
    }
}

/// Smoothed target weight for class `j`.
#[inline]
fn target(j: usize, label: usize, alpha: f64, classes: usize) -> f64 {
    let uniform = alpha / classes as f64;
    if j == label {
        1.0 - alpha + uniform
    } else {
        uniform
    }
}

/// Cross-entropy against `q = (1 − alpha) onehot(label) + alpha / C`.
pub fn smoothed_ce(logits: &[f64], label: usize, alpha: f64) -> f64 {
    let classes = logits.len();
    let lse = log_sum_exp(logits);
    logits
        .iter()
        .enumerate()
        .map(|(j, z)| target(j, label, alpha, classes) * (lse - z))
        .sum()
}

/// Accumulates the gradient of one example into `grad`, returning its loss.
fn accumulate_example(
    head: &LinearHead,
    x: &[f64],
    label: usize,
    alpha: f64,
    scratch: &mut [f64],
    grad: &mut LinearHead,
) -> f64 {
    head.logits_into(x, scratch);
    let loss = smoothed_ce(scratch, label, alpha);
    softmax_in_place(scratch);
    let classes = head.classes;
    for (c, &p) in scratch.iter().enumerate() {
        let diff = p - target(c, label, alpha, classes);
        grad.bias[c] += diff;
        let row = &mut grad.weights[c * head.dim..(c + 1) * head.dim];
        for (g, xi) in row.iter_mut().zip(x) {
            *g += diff * xi;
        }
    }
    loss
}

/// Mean gradient of the smoothed cross-entropy over a batch.
///
/// `features` is row-major with one row per label.
pub fn grad_smoothed_ce(
    head: &LinearHead,
    features: &[f64],
    labels: &[usize],
    alpha: f64,
) -> Result<LinearHead> {
    Ok(batch_gradient(head, features, labels, alpha)?.0)
}

/// Mean gradient and mean loss over a batch.
pub fn batch_gradient(
    head: &LinearHead,
    features: &[f64],
    labels: &[usize],
    alpha: f64,
) -> Result<(LinearHead, f64)> {
    if labels.is_empty() {
        return Err(Error::Empty("gradient batch"));
    }
    if features.len() != labels.len() * head.dim {
        return Err(Error::DimensionMismatch {
            expected: labels.len() * head.dim,
            got: features.len(),
        });
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= head.classes) {
        return Err(Error::IndexOutOfBounds {
            what: "label",
            index: bad,
            len: head.classes,
        });
    }
    let mut grad = LinearHead::zeros(head.dim, head.classes);
    let mut scratch = vec![0.0; head.classes];
    let mut loss = 0.0;
    for (x, &label) in features.chunks_exact(head.dim).zip(labels) {
        loss += accumulate_example(head, x, label, alpha, &mut scratch, &mut grad);
    }
    let n = labels.len() as f64;
    grad.weights.iter_mut().chain(grad.bias.iter_mut()).for_each(|g| *g /= n);
    Ok((grad, loss / n))
}

/// `init_lr * (1 + cos(pi * step / total_steps)) / 2`.
pub fn cosine_lr(step: usize, total_steps: usize, init_lr: f64) -> f64 {
    let total = total_steps.max(1) as f64;
    let progress = (step as f64 / total).min(1.0);
    init_lr * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
}

/// Adam moment estimates for one head.
#[derive(Debug, Clone)]
pub struct Adam {
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: i32,
    m: LinearHead,
    v: LinearHead,
}

impl Adam {
    pub fn new(head: &LinearHead, beta1: f64, beta2: f64, eps: f64) -> Self {
        Adam {
            beta1,
            beta2,
            eps,
            step: 0,
            m: LinearHead::zeros(head.dim, head.classes),
            v: LinearHead::zeros(head.dim, head.classes),
        }
    }

    pub fn step(&mut self, head: &mut LinearHead, grad: &LinearHead, lr: f64) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step);
        let bc2 = 1.0 - self.beta2.powi(self.step);
        let params = head.weights.iter_mut().chain(head.bias.iter_mut());
        let grads = grad.weights.iter().chain(&grad.bias);
        let ms = self.m.weights.iter_mut().chain(self.m.bias.iter_mut());
        let vs = self.v.weights.iter_mut().chain(self.v.bias.iter_mut());
        for (((p, g), m), v) in params.zip(grads).zip(ms).zip(vs) {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub init_lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub label_smoothing: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            init_lr: 0.005,
            batch_size: 256,
            epochs: 100,
            label_smoothing: 0.1,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.init_lr.is_finite() && self.init_lr >= 0.0) {
            return Err(Error::config("init_lr must be finite and >= 0"));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::config("batch_size and epochs must be >= 1"));
        }
        if !(0.0..1.0).contains(&self.label_smoothing) {
            return Err(Error::config("label_smoothing must lie in [0, 1)"));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return Err(Error::config("adam betas must lie in [0, 1)"));
        }
        if self.adam_eps.is_nan() || self.adam_eps <= 0.0 {
            return Err(Error::config("adam_eps must be > 0"));
        }
        Ok(())
    }

    pub fn with_lr(&self, init_lr: f64) -> Self {
        TrainConfig {
            init_lr,
            ..self.clone()
        }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        TrainConfig {
            seed,
            ..self.clone()
        }
    }
}

/// Trains `head` in place and returns its accuracy on the whole source.
///
/// Runs `epochs * ceil(len / batch_size)` Adam steps. The step-`t` learning
/// rate is `cosine_lr(t, total, init_lr) * batch_size / 256`. Each epoch
/// visits the examples in a fresh permutation drawn from `config.seed`.
pub fn train_head<S: ExampleSource + ?Sized>(
    head: &mut LinearHead,
    source: &S,
    config: &TrainConfig,
) -> Result<f64> {
    config.validate()?;
    let n = source.len();
    if n == 0 {
        return Err(Error::Empty("training source"));
    }
    head.check_dim(source.dim())?;
    let dim = head.dim;
    let batch = config.batch_size.min(n);
    let steps_per_epoch = n.div_ceil(batch);
    let total_steps = config.epochs * steps_per_epoch;
    let lr_scale = config.batch_size as f64 / LR_REFERENCE_BATCH;

    let mut adam = Adam::new(head, config.adam_beta1, config.adam_beta2, config.adam_eps);
    let mut order: Vec<usize> = (0..n).collect();
    let mut features = vec![0.0; batch * dim];
    let mut labels = vec![0usize; batch];
    let mut grad = LinearHead::zeros(dim, head.classes);
    let mut scratch = vec![0.0; head.classes];
    let shuffle_seed = mix64(config.seed, tag::SHUFFLE);
    let mut step = 0;

    for epoch in 0..config.epochs {
        let mut rng = seed::rng(mix64(shuffle_seed, epoch as u64));
        order.shuffle(&mut rng);
        for chunk in order.chunks(batch) {
            let lr = cosine_lr(step, total_steps, config.init_lr) * lr_scale;
            grad.weights.fill(0.0);
            grad.bias.fill(0.0);
            let mut loss = 0.0;
            for (slot, &idx) in chunk.iter().enumerate() {
                let x = &mut features[slot * dim..(slot + 1) * dim];
                let label = source.fill(idx, x);
                if label >= head.classes {
                    return Err(Error::IndexOutOfBounds {
                        what: "label",
                        index: label,
                        len: head.classes,
                    });
                }
                labels[slot] = label;
                loss += accumulate_example(
                    head,
                    x,
                    label,
                    config.label_smoothing,
                    &mut scratch,
                    &mut grad,
                );
            }
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { step, lr });
            }
            let inv = 1.0 / chunk.len() as f64;
            grad.weights.iter_mut().chain(grad.bias.iter_mut()).for_each(|g| *g *= inv);
            adam.step(head, &grad, lr);
            if !head.is_finite() {
                return Err(Error::NonFiniteLoss { step, lr });
            }
            step += 1;
        }
    }
    evaluate(head, source)
}

/// Trains a fresh head initialized from `config.seed`.
pub fn train<S: ExampleSource + ?Sized>(
    source: &S,
    classes: usize,
    config: &TrainConfig,
) -> Result<(LinearHead, f64)> {
    if classes == 0 {
        return Err(Error::config("classes must be >= 1"));
    }
    let mut head = init_head(source.dim(), classes, mix64(config.seed, tag::INIT));
    let acc = train_head(&mut head, source, config)?;
    Ok((head, acc))
}

/// Predicted class per example, ties to the lowest index.
pub fn predictions<S: ExampleSource + ?Sized>(head: &LinearHead, source: &S) -> Result<Vec<usize>> {
    head.check_dim(source.dim())?;
    let mut x = vec![0.0; head.dim];
    let mut scratch = vec![0.0; head.classes];
    Ok((0..source.len())
        .map(|idx| {
            source.fill(idx, &mut x);
            head.predict_unchecked(&x, &mut scratch)
        })
        .collect())
}

/// Top-1 accuracy.
pub fn evaluate<S: ExampleSource + ?Sized>(head: &LinearHead, source: &S) -> Result<f64> {
    if source.is_empty() {
        return Err(Error::Empty("evaluation source"));
    }
    head.check_dim(source.dim())?;
    let mut x = vec![0.0; head.dim];
    let mut scratch = vec![0.0; head.classes];
    let correct = (0..source.len())
        .filter(|&idx| {
            let label = source.fill(idx, &mut x);
            head.predict_unchecked(&x, &mut scratch) == label
        })
        .count();
    Ok(correct as f64 / source.len() as f64)
}

#[cfg(test)]
#[allow(clippy::needless_range_loop)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::RngExt;

    fn random_head(dim: usize, classes: usize, seed: u64) -> LinearHead {
        let mut rng = seed::rng(seed);
        let weights = (0..dim * classes).map(|_| rng.random_range(-1.0..1.0)).collect();
        let bias = (0..classes).map(|_| rng.random_range(-1.0..1.0)).collect();
        LinearHead::from_parts(dim, classes, weights, bias).unwrap()
    }

    #[test]
    fn init_is_seeded() {
        assert_eq!(init_head(8, 3, 4), init_head(8, 3, 4));
        assert_ne!(init_head(8, 3, 4), init_head(8, 3, 5));
        assert!(init_head(8, 3, 4).bias().iter().all(|&b| b == 0.0));
    }

    #[test]
    fn init_std() {
        let head = init_head(100, 100, 9);
        let w = head.weights();
        let mean = w.iter().sum::<f64>() / w.len() as f64;
        let std = (w.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (w.len() - 1) as f64).sqrt();
        assert!((std - INIT_STD).abs() <= 0.1 * INIT_STD, "std {std}");
    }

    #[test]
    fn logits_examples() {
        let id = LinearHead::from_parts(2, 2, vec![1.0, 0.0, 0.0, 1.0], vec![0.0, 0.0]).unwrap();
        assert_eq!(logits(&id, &[3.0, 4.0]).unwrap(), vec![3.0, 4.0]);
        let biased = LinearHead::from_parts(2, 2, vec![0.0; 4], vec![1.0, -1.0]).unwrap();
        assert_eq!(logits(&biased, &[0.0, 0.0]).unwrap(), vec![1.0, -1.0]);
        assert!(matches!(
            logits(&id, &[1.0]),
            Err(Error::DimensionMismatch { expected: 2, got: 1 })
        ));
    }

    #[test]
    fn logits_match_naive_dot() {
        let head = random_head(13, 5, 1);
        let mut rng = seed::rng(2);
        let x: Vec<f64> = (0..13).map(|_| rng.random_range(-2.0..2.0)).collect();
        let got = logits(&head, &x).unwrap();
        for c in 0..5 {
            let mut naive = head.bias()[c];
            for j in 0..13 {
                naive += head.weight_row(c)[j] * x[j];
            }
            assert!((got[c] - naive).abs() < 1e-12);
        }
    }

    #[test]
    fn ce_examples() {
        for alpha in [0.0, 0.1, 0.5] {
            let loss = smoothed_ce(&[0.3; 7], 2, alpha);
            assert!((loss - 7f64.ln()).abs() < 1e-12);
        }
        assert!(smoothed_ce(&[1000.0, 0.0, 0.0], 0, 0.0) < 1e-6);
        assert!(smoothed_ce(&[-1000.0, 1000.0], 0, 0.0).is_finite());
    }

    #[test]
    fn ce_matches_literal_formula() {
        let mut rng = seed::rng(3);
        for _ in 0..50 {
            let z: Vec<f64> = (0..4).map(|_| rng.random_range(-5.0..5.0)).collect();
            let label = rng.random_range(0..4);
            let alpha = 0.1;
            let denom: f64 = z.iter().map(|v| v.exp()).sum();
            let literal: f64 = (0..4)
                .map(|j| {
                    let q = if j == label { 1.0 - alpha } else { 0.0 } + alpha / 4.0;
                    -q * (z[j].exp() / denom).ln()
                })
                .sum();
            assert!((smoothed_ce(&z, label, alpha) - literal).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_gradient_at_target() {
        // logits = ln q reproduce the smoothed target exactly
        let alpha: f64 = 0.2;
        let q = [1.0 - alpha + alpha / 2.0, alpha / 2.0];
        let head = LinearHead::from_parts(1, 2, vec![0.0, 0.0], vec![q[0].ln(), q[1].ln()]).unwrap();
        let g = grad_smoothed_ce(&head, &[1.0], &[0], alpha).unwrap();
        assert!(g.weights().iter().chain(g.bias()).all(|v| v.abs() < 1e-15));
    }

    fn finite_difference(head: &LinearHead, x: &[f64], label: usize, alpha: f64) -> LinearHead {
        let h = 1e-6;
        let loss = |hd: &LinearHead| smoothed_ce(&logits(hd, x).unwrap(), label, alpha);
        let mut out = LinearHead::zeros(head.dim(), head.classes());
        for k in 0..head.weights.len() {
            let mut plus = head.clone();
            let mut minus = head.clone();
            plus.weights[k] += h;
            minus.weights[k] -= h;
            out.weights[k] = (loss(&plus) - loss(&minus)) / (2.0 * h);
        }
        for k in 0..head.bias.len() {
            let mut plus = head.clone();
            let mut minus = head.clone();
            plus.bias[k] += h;
            minus.bias[k] -= h;
            out.bias[k] = (loss(&plus) - loss(&minus)) / (2.0 * h);
        }
        out
    }

    fn relative_error(a: &LinearHead, b: &LinearHead) -> f64 {
        let diff: f64 = a
            .weights()
            .iter()
            .chain(a.bias())
            .zip(b.weights().iter().chain(b.bias()))
            .map(|(x, y)| (x - y).powi(2))
            .sum::<f64>()
            .sqrt();
        let scale: f64 = a.weights().iter().chain(a.bias()).map(|x| x * x).sum::<f64>().sqrt();
        diff / scale.max(1e-12)
    }

    #[test]
    fn gradient_matches_finite_differences_1d() {
        let head = LinearHead::from_parts(1, 2, vec![0.4, -0.7], vec![0.1, 0.2]).unwrap();
        let analytic = grad_smoothed_ce(&head, &[1.3], &[1], 0.0).unwrap();
        let numeric = finite_difference(&head, &[1.3], 1, 0.0);
        assert!(relative_error(&analytic, &numeric) < 1e-6);
    }

    #[test]
    fn batch_gradient_is_mean() {
        let head = random_head(3, 4, 8);
        let xs = [0.5, -1.0, 2.0, 1.5, 0.0, -0.3, -2.0, 0.7, 0.1];
        let labels = [0, 3, 1];
        let batch = grad_smoothed_ce(&head, &xs, &labels, 0.1).unwrap();
        let mut mean = LinearHead::zeros(3, 4);
        for (x, &l) in xs.chunks(3).zip(&labels) {
            let g = grad_smoothed_ce(&head, x, &[l], 0.1).unwrap();
            for (m, v) in mean.weights.iter_mut().zip(g.weights()) {
                *m += v / 3.0;
            }
            for (m, v) in mean.bias.iter_mut().zip(g.bias()) {
                *m += v / 3.0;
            }
        }
        assert!(relative_error(&batch, &mean) < 1e-12);
        assert!(grad_smoothed_ce(&head, &[], &[], 0.1).is_err());
        assert!(grad_smoothed_ce(&head, &[1.0, 2.0], &[0], 0.1).is_err());
    }

    #[test]
    fn cosine_examples() {
        assert_eq!(cosine_lr(0, 10, 0.3), 0.3);
        assert!(cosine_lr(10, 10, 0.3).abs() < 1e-15);
        assert!((cosine_lr(5, 10, 0.3) - 0.15).abs() < 1e-15);
    }

    #[test]
    fn adam_zero_gradient_is_noop() {
        let mut head = random_head(4, 3, 1);
        let before = head.clone();
        let mut adam = Adam::new(&head, 0.9, 0.999, 1e-8);
        let zero = LinearHead::zeros(4, 3);
        for _ in 0..5 {
            adam.step(&mut head, &zero, 0.5);
        }
        assert_eq!(head, before);
    }

    fn config(epochs: usize, lr: f64) -> TrainConfig {
        TrainConfig {
            init_lr: lr,
            epochs,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn separable_pair() {
        let ds = FeatureDataset::from_rows(&[vec![1.0], vec![-1.0]], vec![0, 1], 2).unwrap();
        let (_, acc) = train(&ds, 2, &config(200, 1.0)).unwrap();
        assert_eq!(acc, 1.0);
    }

    #[test]
    fn training_reduces_loss() {
        let ds = FeatureDataset::from_rows(&[vec![0.3, -0.2, 0.9]], vec![1], 3).unwrap();
        let cfg = TrainConfig {
            label_smoothing: 0.0,
            ..config(20, 0.5)
        };
        let init = init_head(3, 3, mix64(cfg.seed, tag::INIT));
        let before = smoothed_ce(&logits(&init, ds.row(0)).unwrap(), 1, 0.0);
        let (head, _) = train(&ds, 3, &cfg).unwrap();
        let after = smoothed_ce(&logits(&head, ds.row(0)).unwrap(), 1, 0.0);
        assert!(after < before, "{after} >= {before}");
    }

    #[test]
    fn training_is_deterministic() {
        let spec = crate::feature_store::MixtureSpec::preset("iso-easy", 1).unwrap();
        let (train_set, _) = crate::feature_store::synth_mixture(&spec).unwrap();
        let cfg = TrainConfig {
            batch_size: 16,
            ..config(5, 0.1)
        };
        let (a, _) = train(&train_set, 4, &cfg).unwrap();
        let (b, _) = train(&train_set, 4, &cfg).unwrap();
        assert_eq!(a.to_bytes(), b.to_bytes());
    }

    #[test]
    fn nan_loss_reports_step() {
        let ds = FeatureDataset::from_rows(&[vec![1.0], vec![-1.0]], vec![0, 1], 2).unwrap();
        let err = train(&ds, 2, &config(3, 1e308)).unwrap_err();
        match err {
            Error::NonFiniteLoss { step, lr } => assert!(step < 3 && lr > 1e300),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn evaluate_examples() {
        let ds = FeatureDataset::from_rows(&[vec![1.0], vec![-1.0]], vec![0, 1], 2).unwrap();
        let perfect = LinearHead::from_parts(1, 2, vec![1.0, -1.0], vec![0.0, 0.0]).unwrap();
        assert_eq!(evaluate(&perfect, &ds).unwrap(), 1.0);

        let zeros_ds = FeatureDataset::from_rows(&[vec![2.0], vec![-3.0]], vec![0, 0], 3).unwrap();
        assert_eq!(evaluate(&LinearHead::zeros(1, 3), &zeros_ds).unwrap(), 1.0);

        assert!(evaluate(&LinearHead::zeros(2, 3), &zeros_ds).is_err());
    }

    #[test]
    fn evaluate_matches_row_loop() {
        let head = random_head(6, 5, 12);
        let mut rng = seed::rng(13);
        let rows: Vec<Vec<f64>> = (0..300)
            .map(|_| (0..6).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let labels: Vec<usize> = (0..300).map(|_| rng.random_range(0..5)).collect();
        let ds = FeatureDataset::from_rows(&rows, labels.clone(), 5).unwrap();
        let mut correct = 0;
        for (row, &label) in rows.iter().zip(&labels) {
            let mut best = 0;
            let mut best_val = f64::NEG_INFINITY;
            for c in 0..5 {
                let mut v = head.bias()[c];
                for j in 0..6 {
                    v += head.weight_row(c)[j] * row[j];
                }
                if v > best_val {
                    best_val = v;
                    best = c;
                }
            }
            correct += (best == label) as usize;
        }
        assert_eq!(evaluate(&head, &ds).unwrap(), correct as f64 / 300.0);
    }

    #[test]
    fn head_bytes_round_trip() {
        let head = random_head(3, 2, 4);
        assert_eq!(LinearHead::from_bytes(&head.to_bytes()).unwrap(), head);
        let bytes = head.to_bytes();
        assert!(matches!(
            LinearHead::from_bytes(&bytes[..bytes.len() - 1]),
            Err(Error::TruncatedPayload(_))
        ));
        assert!(matches!(LinearHead::from_bytes(b"nope"), Err(Error::BadMagic { .. })));
    }

    proptest! {
        #[test]
        fn gradient_check(
            seed in any::<u64>(),
            dim in 1usize..6,
            classes in 2usize..6,
            alpha in 0.0f64..0.9,
        ) {
            let head = random_head(dim, classes, seed);
            let mut rng = seed::rng(seed ^ 1);
            let x: Vec<f64> = (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect();
            let label = rng.random_range(0..classes);
            let analytic = grad_smoothed_ce(&head, &x, &[label], alpha).unwrap();
            let numeric = finite_difference(&head, &x, label, alpha);
            prop_assert!(relative_error(&analytic, &numeric) < 1e-5);
        }

        #[test]
        fn softmax_is_simplex(z in prop::collection::vec(-50.0f64..50.0, 1..10)) {
            let p = softmax(&z);
            prop_assert!(p.iter().all(|&v| v >= 0.0));
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn gibbs_inequality(
            z in prop::collection::vec(-10.0f64..10.0, 2..8),
            alpha in 0.0f64..0.99,
            pick in any::<prop::sample::Index>(),
        ) {
            let c = z.len();
            let label = pick.index(c);
            let entropy: f64 = (0..c)
                .map(|j| target(j, label, alpha, c))
                .filter(|&q| q > 0.0)
                .map(|q| -q * q.ln())
                .sum();
            prop_assert!(smoothed_ce(&z, label, alpha) >= entropy - 1e-12);
        }
    }
}
