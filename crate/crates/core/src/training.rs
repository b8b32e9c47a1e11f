//! Losses, the AdamW optimizer with warmup + step decay, the training loop and
//! split evaluation.
//!
//! Training arithmetic is `f32`; losses and their gradients are computed in
//! `f64` on the batch of predictions.

use std::io::Write;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::DatasetManifest;
use crate::metrics::{metric_bundle, MetricBundle, MetricError};
use crate::model::{ModelError, NetInput, QualityModel, QualityNet, SegmentationProvider};
use crate::nn::{cast, to_f64, Module, Scalar};
use crate::types::{RngSeed, Split};

#[derive(Debug, Error)]
pub enum LossError {
    #[error("length mismatch: {0} scores vs {1} predictions")]
    Length(usize, usize),
    #[error("empty batch")]
    Empty,
    #[error("KL requires a batch")]
    KlBatch,
    #[error("negative entry {0} at index {1}")]
    Negative(f64, usize),
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("{split} split is empty")]
    EmptySplit { split: Split },
    #[error("patch {patch_id} has no label for method {method_id}")]
    MissingLabel { patch_id: String, method_id: String },
    #[error("non-finite loss at step {step}")]
    NonFinite { step: usize },
    #[error("frozen encoder changed during training")]
    EncoderChanged,
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Metric(#[from] MetricError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub alpha: f64,
    pub epsilon: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            epsilon: 1e-8,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if !(self.alpha >= 0.0) || !(self.epsilon > 0.0) {
            return Err(TrainError::Config(format!(
                "loss needs alpha >= 0 and epsilon > 0, got alpha {} epsilon {}",
                self.alpha, self.epsilon
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Defaults to 5% of `max_steps`.
    pub warmup_steps: Option<usize>,
    /// Defaults to 40% of `max_steps`.
    pub decay_step_size: Option<usize>,
    pub decay_gamma: f64,
    pub batch_size: usize,
    pub max_steps: usize,
    /// Batch-order and dropout seed. Not read from config files; the CLI
    /// derives it from the top-level seed.
    #[serde(skip)]
    pub seed: u64,
    /// Global gradient-norm clip; 0 disables clipping.
    pub grad_clip: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            warmup_steps: None,
            decay_step_size: None,
            decay_gamma: 0.5,
            batch_size: 16,
            max_steps: 2000,
            seed: 0,
            grad_clip: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::Config(m));
        if !(self.learning_rate > 0.0) {
            return bad(format!("learning_rate must be > 0, got {}", self.learning_rate));
        }
        if self.batch_size < 2 {
            return bad(format!("batch_size must be >= 2, got {}", self.batch_size));
        }
        if self.decay_step_size == Some(0) {
            return bad("decay_step_size must be > 0".into());
        }
        if !(self.decay_gamma > 0.0) || !(self.weight_decay >= 0.0) || !(self.grad_clip >= 0.0) {
            return bad("decay_gamma must be > 0, weight_decay and grad_clip >= 0".into());
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.adam_eps > 0.0) {
            return bad("adam betas must lie in [0, 1) and adam_eps > 0".into());
        }
        Ok(())
    }

    pub fn schedule(&self) -> LrSchedule {
        LrSchedule {
            base: self.learning_rate,
            warmup: self.warmup_steps.unwrap_or(self.max_steps / 20),
            step_size: self.decay_step_size.unwrap_or((self.max_steps * 2 / 5).max(1)),
            gamma: self.decay_gamma,
        }
    }
}

// ---------------------------------------------------------------------------
// Losses

fn check_batch(s: &[f64], q: &[f64]) -> Result<(), LossError> {
    if s.len() != q.len() {
        return Err(LossError::Length(s.len(), q.len()));
    }
    if s.is_empty() {
        return Err(LossError::Empty);
    }
    Ok(())
}

/// `(1/N) Σ (S_i - Q_i)²`
pub fn mse_loss(s: &[f64], q: &[f64]) -> Result<f64, LossError> {
    check_batch(s, q)?;
    Ok(s.iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / s.len() as f64)
}

pub fn mse_grad(s: &[f64], q: &[f64]) -> Result<Vec<f64>, LossError> {
    check_batch(s, q)?;
    let n = s.len() as f64;
    Ok(s.iter().zip(q).map(|(a, b)| 2.0 * (b - a) / n).collect())
}

fn smoothed(x: &[f64], eps: f64) -> Result<(Vec<f64>, f64), LossError> {
    if let Some(i) = x.iter().position(|&v| v < 0.0) {
        return Err(LossError::Negative(x[i], i));
    }
    let z: f64 = x.iter().map(|v| v + eps).sum();
    Ok((x.iter().map(|v| (v + eps) / z).collect(), z))
}

/// KL divergence between the batch-normalized, ε-smoothed label and
/// prediction distributions: `Σ P_i log(P_i / Q'_i)`.
pub fn kl_loss(s: &[f64], q: &[f64], cfg: &LossConfig) -> Result<f64, LossError> {
    check_batch(s, q)?;
    if s.len() < 2 {
        return Err(LossError::KlBatch);
    }
    let (p, _) = smoothed(s, cfg.epsilon)?;
    let (qn, _) = smoothed(q, cfg.epsilon)?;
    let k: f64 = p.iter().zip(&qn).map(|(a, b)| a * (a / b).ln()).sum();
    // rounding can leave a tiny negative value when P == Q'
    Ok(if k < 0.0 { 0.0 } else { k })
}

/// `∂KL/∂Q_j = -P_j / (Q_j + ε) + 1/Z` with `Z = Σ (Q + ε)`.
pub fn kl_grad(s: &[f64], q: &[f64], cfg: &LossConfig) -> Result<Vec<f64>, LossError> {
    check_batch(s, q)?;
    if s.len() < 2 {
        return Err(LossError::KlBatch);
    }
    let (p, _) = smoothed(s, cfg.epsilon)?;
    let (_, z) = smoothed(q, cfg.epsilon)?;
    Ok(p.iter().zip(q).map(|(pj, qj)| -pj / (qj + cfg.epsilon) + 1.0 / z).collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossParts {
    pub mse: f64,
    pub kl: f64,
    pub total: f64,
}

/// `MSE + α·KL`. With `α = 0` the KL term is skipped, so single-element
/// batches are allowed.
pub fn total_loss(s: &[f64], q: &[f64], cfg: &LossConfig) -> Result<f64, LossError> {
    Ok(loss_parts(s, q, cfg)?.total)
}

pub fn loss_parts(s: &[f64], q: &[f64], cfg: &LossConfig) -> Result<LossParts, LossError> {
    let mse = mse_loss(s, q)?;
    if cfg.alpha == 0.0 {
        return Ok(LossParts { mse, kl: 0.0, total: mse });
    }
    let kl = kl_loss(s, q, cfg)?;
    Ok(LossParts {
        mse,
        kl,
        total: mse + cfg.alpha * kl,
    })
}

pub fn total_grad(s: &[f64], q: &[f64], cfg: &LossConfig) -> Result<Vec<f64>, LossError> {
    let mut g = mse_grad(s, q)?;
    if cfg.alpha != 0.0 {
        for (a, b) in g.iter_mut().zip(kl_grad(s, q, cfg)?) {
            *a += cfg.alpha * b;
        }
    }
    Ok(g)
}

// ---------------------------------------------------------------------------
// Schedule and optimizer

/// Linear warmup to `base`, then `base · γ^⌊(step - warmup) / step_size⌋`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LrSchedule {
    pub base: f64,
    pub warmup: usize,
    pub step_size: usize,
    pub gamma: f64,
}

impl LrSchedule {
    pub fn lr(&self, step: usize) -> f64 {
        if step < self.warmup {
            return self.base * (step + 1) as f64 / self.warmup as f64;
        }
        let k = (step - self.warmup) / self.step_size.max(1);
        self.base * self.gamma.powi(k as i32)
    }
}

/// AdamW with decoupled weight decay.
#[derive(Debug, Clone)]
pub struct AdamW<T> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    t: i32,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Scalar> AdamW<T> {
    pub fn new<M: Module<T>>(params: &M, cfg: &TrainConfig) -> Self {
        let shapes: Vec<Vec<T>> = params.tensors().iter().map(|(_, t)| vec![T::zero(); t.len()]).collect();
        Self {
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.adam_eps,
            weight_decay: cfg.weight_decay,
            t: 0,
            m: shapes.clone(),
            v: shapes,
        }
    }

    pub fn step<M: Module<T>>(&mut self, params: &mut M, grads: &M, lr: f64) {
        self.t += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(self.t);
        let c2 = 1.0 - b2.powi(self.t);
        let grads: Vec<&Vec<T>> = grads.tensors().into_iter().map(|(_, g)| g).collect();
        let lr_t: T = cast(lr);
        let decay: T = cast(lr * self.weight_decay);
        let (b1t, b2t, eps): (T, T, T) = (cast(b1), cast(b2), cast(self.eps));
        let (c1t, c2t): (T, T) = (cast(c1), cast(c2));
        for (((p, g), m), v) in params.tensors_mut().into_iter().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            for i in 0..p.len() {
                m[i] = b1t * m[i] + (T::one() - b1t) * g[i];
                v[i] = b2t * v[i] + (T::one() - b2t) * g[i] * g[i];
                let update = (m[i] / c1t) / ((v[i] / c2t).sqrt() + eps);
                p[i] = p[i] - decay * p[i] - lr_t * update;
            }
        }
    }
}

/// Scales `grads` so its global L2 norm is at most `max_norm`; returns the pre-clip norm.
pub fn clip_grad_norm<T: Scalar, M: Module<T>>(grads: &mut M, max_norm: f64) -> f64 {
    let norm = grads
        .tensors()
        .iter()
        .flat_map(|(_, t)| t.iter())
        .map(|&g| to_f64(g) * to_f64(g))
        .sum::<f64>()
        .sqrt();
    if max_norm > 0.0 && norm > max_norm {
        let s: T = cast(max_norm / norm);
        for t in grads.tensors_mut() {
            t.iter_mut().for_each(|g| *g = *g * s);
        }
    }
    norm
}

// ---------------------------------------------------------------------------
// Training loop

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossPoint {
    pub step: usize,
    pub lr: f64,
    pub mse: f64,
    pub kl: f64,
    pub total: f64,
}

pub fn write_loss_curve(curve: &[LossPoint], out: impl Write) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["step", "lr", "mse", "kl", "total"])?;
    for p in curve {
        w.write_record([p.step.to_string(), p.lr.to_string(), p.mse.to_string(), p.kl.to_string(), p.total.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Frozen inputs and the label for one patch.
#[derive(Debug, Clone)]
pub struct Sample {
    pub patch_id: String,
    pub input: NetInput<f32>,
    pub label: f64,
}

/// Runs the frozen branches once for every record in `split`.
pub fn prepare_samples(
    model: &QualityModel,
    manifest: &DatasetManifest,
    split: Split,
    method_id: &str,
    seg: &dyn SegmentationProvider,
) -> Result<Vec<Sample>, TrainError> {
    let samples = manifest
        .split(split)
        .map(|r| {
            let label = *r.record.labels.get(method_id).ok_or_else(|| TrainError::MissingLabel {
                patch_id: r.record.patch_id.clone(),
                method_id: method_id.to_string(),
            })?;
            let map = seg.seg_map(&r.record.patch_id, method_id)?;
            Ok(Sample {
                patch_id: r.record.patch_id.clone(),
                input: model.prepare_input(&r.record.patch_id, &map)?,
                label,
            })
        })
        .collect::<Result<Vec<_>, TrainError>>()?;
    if samples.is_empty() {
        return Err(TrainError::EmptySplit { split });
    }
    Ok(samples)
}

/// Mini-batch training on prepared samples. Each epoch is a seeded shuffle
/// cut into full batches; a trailing partial batch is dropped. Batches are
/// capped at the sample count.
pub fn train_samples(
    net: &mut QualityNet<f32>,
    samples: &[Sample],
    train: &TrainConfig,
    loss: &LossConfig,
) -> Result<Vec<LossPoint>, TrainError> {
    train.validate()?;
    loss.validate()?;
    if samples.len() < 2 {
        return Err(TrainError::Config(format!("need at least 2 training samples, got {}", samples.len())));
    }
    let seed = RngSeed(train.seed);
    let mut order_rng = seed.stream("batches");
    let mut dropout_rng = seed.stream("dropout");
    let schedule = train.schedule();
    let batch = train.batch_size.min(samples.len());
    let mut opt = AdamW::new(net, train);
    let mut grads = net.clone();
    let mut order: Vec<usize> = Vec::new();
    let mut cursor = 0;
    let mut curve = Vec::with_capacity(train.max_steps);

    for step in 0..train.max_steps {
        if cursor + batch > order.len() {
            order = (0..samples.len()).collect();
            order.shuffle(&mut order_rng);
            cursor = 0;
        }
        let idx = &order[cursor..cursor + batch];
        cursor += batch;

        let mut preds = Vec::with_capacity(batch);
        let mut caches = Vec::with_capacity(batch);
        for &i in idx {
            let (q, cache) = net.forward(&samples[i].input, Some(&mut dropout_rng));
            preds.push(f64::from(q));
            caches.push(cache);
        }
        let labels: Vec<f64> = idx.iter().map(|&i| samples[i].label).collect();
        let parts = loss_parts(&labels, &preds, loss)?;
        if !parts.total.is_finite() {
            return Err(TrainError::NonFinite { step });
        }
        let dq = total_grad(&labels, &preds, loss)?;

        grads.zero_();
        for (cache, d) in caches.iter().zip(&dq) {
            net.backward(cache, *d as f32, &mut grads);
        }
        clip_grad_norm(&mut grads, train.grad_clip);
        let lr = schedule.lr(step);
        opt.step(net, &grads, lr);
        curve.push(LossPoint {
            step,
            lr,
            mse: parts.mse,
            kl: parts.kl,
            total: parts.total,
        });
    }
    Ok(curve)
}

/// Trains `model` on the train split of `manifest` for one method.
pub fn train(
    model: &mut QualityModel,
    manifest: &DatasetManifest,
    method_id: &str,
    seg: &dyn SegmentationProvider,
    train_cfg: &TrainConfig,
    loss_cfg: &LossConfig,
) -> Result<Vec<LossPoint>, TrainError> {
    let before = model.encoder.checksum();
    let samples = prepare_samples(model, manifest, Split::Train, method_id, seg)?;
    let curve = train_samples(&mut model.net, &samples, train_cfg, loss_cfg)?;
    if model.encoder.checksum() != before {
        return Err(TrainError::EncoderChanged);
    }
    Ok(curve)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub patch_ids: Vec<String>,
    pub predictions: Vec<f64>,
    pub labels: Vec<f64>,
    pub bundle: MetricBundle,
}

pub fn predict_samples(net: &QualityNet<f32>, samples: &[Sample]) -> Vec<f64> {
    samples.iter().map(|s| f64::from(net.predict(&s.input))).collect()
}

/// Eval-mode predictions for every patch in `split` plus the metric bundle.
pub fn evaluate_split(
    model: &QualityModel,
    manifest: &DatasetManifest,
    method_id: &str,
    split: Split,
    seg: &dyn SegmentationProvider,
) -> Result<Evaluation, TrainError> {
    let samples = prepare_samples(model, manifest, split, method_id, seg)?;
    let predictions = predict_samples(&model.net, &samples);
    let labels: Vec<f64> = samples.iter().map(|s| s.label).collect();
    let bundle = metric_bundle(&predictions, &labels)?;
    Ok(Evaluation {
        patch_ids: samples.into_iter().map(|s| s.patch_id).collect(),
        predictions,
        labels,
        bundle,
    })
}
