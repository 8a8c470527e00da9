//! Binary cross-entropy, Adam, and the epoch loop.

pub mod checkpoint;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::neuralcore::model::{forward_backward_batch, predict, ModelParams};
use crate::preprocess::{GaitCycleSample, SensorGraph};
use crate::{Error, Result};

/// Predicted probabilities are clipped to `[CLIP, 1 - CLIP]` inside the loss
/// so a saturated output cannot produce an infinite loss or gradient.
pub const PROB_CLIP: f64 = 1e-7;

// ── Binary cross-entropy ────────────────────────────────────────────────────

fn check_batch(probs: &[f64], labels: &[f64]) -> Result<()> {
    if probs.is_empty() {
        return Err(Error::Train("loss over an empty batch".into()));
    }
    if probs.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} probabilities against {} labels",
            probs.len(),
            labels.len()
        )));
    }
    if probs.iter().any(|p| !p.is_finite()) {
        return Err(Error::Train("non-finite probability in loss".into()));
    }
    if labels.iter().any(|&y| y != 0.0 && y != 1.0) {
        return Err(Error::Train("labels must be 0 or 1".into()));
    }
    Ok(())
}

/// Mean `-[y ln p + (1-y) ln(1-p)]` with `p` clipped away from 0 and 1.
pub fn bce_loss(probs: &[f64], labels: &[f64]) -> Result<f64> {
    check_batch(probs, labels)?;
    let mut acc = 0.0;
    for (&p, &y) in probs.iter().zip(labels) {
        let pc = p.clamp(PROB_CLIP, 1.0 - PROB_CLIP);
        acc -= y * pc.ln() + (1.0 - y) * (1.0 - pc).ln();
    }
    Ok(acc / probs.len() as f64)
}

/// `dL/dp` for one sample in a mean-reduced batch of `n`. The clip is part
/// of the function being differentiated: outside the clip window the loss is
/// flat, so the gradient is exactly zero.
#[inline]
pub(crate) fn bce_grad_single(p: f64, y: f64, n: usize) -> f64 {
    if p <= PROB_CLIP || p >= 1.0 - PROB_CLIP {
        return 0.0;
    }
    (p - y) / (n as f64 * p * (1.0 - p))
}

/// Per-sample `dL/dp` matching [`bce_loss`], including its clipping.
pub fn bce_grad(probs: &[f64], labels: &[f64]) -> Result<Vec<f64>> {
    check_batch(probs, labels)?;
    let n = probs.len();
    Ok(probs
        .iter()
        .zip(labels)
        .map(|(&p, &y)| bce_grad_single(p, y, n))
        .collect())
}

// ── Adam ────────────────────────────────────────────────────────────────────

/// First and second moment estimates, aligned with the model's array order.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub t: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(params: &ModelParams) -> Self {
        let mut m = Vec::new();
        params.for_each_array(|_, a| m.push(vec![0.0; a.len()]));
        AdamState { t: 0, m: m.clone(), v: m }
    }
}

/// One bias-corrected Adam update in place. Gradients must be finite and
/// shaped exactly like the parameters.
pub fn adam_step(
    params: &mut ModelParams,
    grads: &ModelParams,
    state: &mut AdamState,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
) -> Result<()> {
    let mut grad_arrays: Vec<&[f64]> = Vec::new();
    grads.for_each_array(|_, a| grad_arrays.push(a));
    if grad_arrays.len() != state.m.len() {
        return Err(Error::Train("optimizer state does not match the model".into()));
    }
    for (i, g) in grad_arrays.iter().enumerate() {
        if g.len() != state.m[i].len() {
            return Err(Error::Train("gradient shape does not match optimizer state".into()));
        }
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::Train("non-finite gradient; training diverged".into()));
        }
    }
    state.t += 1;
    let bc1 = 1.0 - beta1.powi(state.t as i32);
    let bc2 = 1.0 - beta2.powi(state.t as i32);
    let mut idx = 0;
    params.for_each_array_mut(|_, theta| {
        let (m, v, g) = (&mut state.m[idx], &mut state.v[idx], grad_arrays[idx]);
        for j in 0..theta.len() {
            m[j] = beta1 * m[j] + (1.0 - beta1) * g[j];
            v[j] = beta2 * v[j] + (1.0 - beta2) * g[j] * g[j];
            let mhat = m[j] / bc1;
            let vhat = v[j] / bc2;
            theta[j] -= lr * mhat / (vhat.sqrt() + eps);
        }
        idx += 1;
    });
    Ok(())
}

// ── Training loop ───────────────────────────────────────────────────────────

/// Optimisation knobs. Defaults are the reference recipe: batches of 128,
/// 140 epochs, learning rate 1e-3.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub shuffle: bool,
    pub shuffle_seed: u64,
    pub dropout_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 128,
            epochs: 140,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            shuffle: true,
            shuffle_seed: 1,
            dropout_seed: 2,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Config("batch size and epochs must be positive".into()));
        }
        if !self.learning_rate.is_finite() || self.learning_rate <= 0.0 {
            return Err(Error::Config(format!("learning rate {} must be positive", self.learning_rate)));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config(format!("{name} {b} outside [0, 1)")));
            }
        }
        if !self.epsilon.is_finite() || self.epsilon <= 0.0 {
            return Err(Error::Config(format!("epsilon {} must be positive", self.epsilon)));
        }
        Ok(())
    }
}

/// One epoch's aggregate numbers. Validation fields are absent when no
/// validation set was given.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub val_loss: Option<f64>,
    pub val_accuracy: Option<f64>,
}

pub struct TrainOutcome {
    /// Parameters after the final epoch.
    pub params: ModelParams,
    /// Parameters from the epoch with the lowest validation loss (final
    /// parameters when no validation set was given).
    pub best_params: ModelParams,
    pub best_epoch: usize,
    pub history: Vec<EpochStats>,
}

fn loss_and_accuracy(probs: &[f64], labels: &[f64]) -> Result<(f64, f64)> {
    let loss = bce_loss(probs, labels)?;
    let hits = probs
        .iter()
        .zip(labels)
        .filter(|(&p, &y)| (p >= 0.5) == (y == 1.0))
        .count();
    Ok((loss, hits as f64 / probs.len() as f64))
}

fn labels_of(samples: &[GaitCycleSample]) -> Vec<f64> {
    samples.iter().map(|s| f64::from(s.label)).collect()
}

/// Mini-batch Adam over BCE. Deterministic for fixed seeds: epoch shuffles
/// come from `shuffle_seed`, dropout masks from `dropout_seed` with one
/// stream per (epoch, sample position). Returns an error if training
/// produces a non-finite loss or gradient.
pub fn train(
    params: ModelParams,
    train_set: &[GaitCycleSample],
    val_set: &[GaitCycleSample],
    graph: &SensorGraph,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(Error::Train("training set is empty".into()));
    }
    let mut params = params;
    let mut state = AdamState::new(&params);
    let mut rng = ChaCha8Rng::seed_from_u64(config.shuffle_seed);
    let val_labels = labels_of(val_set);

    let mut history = Vec::with_capacity(config.epochs);
    let mut best_params = params.clone();
    let mut best_epoch = 0usize;
    let mut best_score = f64::INFINITY;

    for epoch in 0..config.epochs {
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        if config.shuffle {
            order.shuffle(&mut rng);
        }

        let mut loss_sum = 0.0;
        let mut hit_sum = 0usize;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<GaitCycleSample> =
                chunk.iter().map(|&i| train_set[i].clone()).collect();
            let labels = labels_of(&batch);
            let n = batch.len();
            let stream_base = epoch as u64 * train_set.len() as u64 + chunk[0] as u64;
            let (probs, grads) = forward_backward_batch(
                &params,
                &batch,
                graph,
                config.dropout_seed,
                stream_base,
                |i, p| bce_grad_single(p, labels[i], n),
            )?;
            let (loss, _) = loss_and_accuracy(&probs, &labels)?;
            if !loss.is_finite() {
                return Err(Error::Train(format!("loss diverged at epoch {epoch}")));
            }
            loss_sum += loss * n as f64;
            hit_sum += probs
                .iter()
                .zip(&labels)
                .filter(|(&p, &y)| (p >= 0.5) == (y == 1.0))
                .count();
            adam_step(
                &mut params,
                &grads,
                &mut state,
                config.learning_rate,
                config.beta1,
                config.beta2,
                config.epsilon,
            )?;
        }
        let train_loss = loss_sum / train_set.len() as f64;
        let train_accuracy = hit_sum as f64 / train_set.len() as f64;

        let (val_loss, val_accuracy) = if val_set.is_empty() {
            (None, None)
        } else {
            let probs = predict(&params, val_set, graph)?;
            let (l, a) = loss_and_accuracy(&probs, &val_labels)?;
            (Some(l), Some(a))
        };

        let score = val_loss.unwrap_or(train_loss);
        if score < best_score {
            best_score = score;
            best_epoch = epoch;
            best_params = params.clone();
        }
        log::info!(
            "epoch {epoch}: train loss {train_loss:.6} acc {train_accuracy:.4}{}",
            match (val_loss, val_accuracy) {
                (Some(l), Some(a)) => format!(" | val loss {l:.6} acc {a:.4}"),
                _ => String::new(),
            }
        );
        history.push(EpochStats { epoch, train_loss, train_accuracy, val_loss, val_accuracy });
    }

    Ok(TrainOutcome { params, best_params, best_epoch, history })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neuralcore::model::ModelConfig;
    use crate::preprocess::SensorGraph;
    use rand::{Rng, SeedableRng};

    #[test]
    fn bce_known_values() {
        // -ln(0.5) for an uninformative prediction
        let l = bce_loss(&[0.5, 0.5], &[1.0, 0.0]).unwrap();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-15);
        // -ln(0.25)
        let l = bce_loss(&[0.25], &[1.0]).unwrap();
        assert!((l - 4.0f64.ln()).abs() < 1e-15);
        // clipping keeps a confident miss finite
        let l = bce_loss(&[1.0], &[0.0]).unwrap();
        assert!(l.is_finite() && l > 10.0);
    }

    #[test]
    fn bce_rejects_bad_input() {
        assert!(bce_loss(&[], &[]).is_err());
        assert!(bce_loss(&[0.5], &[1.0, 0.0]).is_err());
        assert!(bce_loss(&[0.5], &[0.5]).is_err());
        assert!(bce_loss(&[f64::NAN], &[1.0]).is_err());
    }

    #[test]
    fn bce_grad_matches_finite_differences() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let probs: Vec<f64> = (0..5).map(|_| 0.02 + 0.96 * rng.random::<f64>()).collect();
            let labels: Vec<f64> = (0..5).map(|_| f64::from(rng.random::<f64>() < 0.5)).collect();
            let grad = bce_grad(&probs, &labels).unwrap();
            for i in 0..probs.len() {
                let mut hi = probs.clone();
                let mut lo = probs.clone();
                let h = 1e-7;
                hi[i] += h;
                lo[i] -= h;
                let num = (bce_loss(&hi, &labels).unwrap() - bce_loss(&lo, &labels).unwrap())
                    / (2.0 * h);
                assert!(
                    (grad[i] - num).abs() <= 1e-5 * grad[i].abs().max(1.0),
                    "{} vs {num}",
                    grad[i]
                );
            }
        }
    }

    #[test]
    fn bce_grad_known_value() {
        // -1/p averaged over a batch of one
        let grad = bce_grad(&[0.5], &[1.0]).unwrap();
        assert!((grad[0] - (-2.0)).abs() < 1e-15);
    }

    #[test]
    fn bce_grad_is_zero_when_saturated_at_the_label() {
        let grad = bce_grad(&[1.0, 0.0], &[1.0, 0.0]).unwrap();
        assert_eq!(grad, vec![0.0, 0.0]);
    }

    fn toy_model() -> ModelParams {
        let config = ModelConfig {
            n_nodes: 2,
            seq_len: 6,
            kernel: 3,
            conv_channels: vec![2],
            gru_hidden: 3,
            gru_layers: 1,
            gat_hidden: 3,
            gat_layers: 1,
            dropout: 0.0,
            leaky_slope: 0.2,
        };
        ModelParams::init(&config, 0).unwrap()
    }

    #[test]
    fn adam_scalar_trajectory() {
        // with a constant unit gradient the bias-corrected step is ~lr
        let mut params = toy_model();
        let mut grads = ModelParams::zeros(&params.config).unwrap();
        grads.head.bias[0] = 1.0;
        let mut state = AdamState::new(&params);
        let start = params.head.bias[0];
        for step in 1..=3 {
            adam_step(&mut params, &grads, &mut state, 0.1, 0.9, 0.999, 1e-8).unwrap();
            let expect = start - 0.1 * step as f64;
            assert!(
                (params.head.bias[0] - expect).abs() < 1e-7,
                "step {step}: {} vs {expect}",
                params.head.bias[0]
            );
        }
    }

    #[test]
    fn adam_zero_gradient_is_identity_on_fresh_state() {
        let mut params = toy_model();
        let before = params.clone();
        let grads = ModelParams::zeros(&params.config).unwrap();
        let mut state = AdamState::new(&params);
        adam_step(&mut params, &grads, &mut state, 0.1, 0.9, 0.999, 1e-8).unwrap();
        assert_eq!(params, before);
    }

    #[test]
    fn adam_rejects_non_finite_gradients() {
        let mut params = toy_model();
        let mut grads = ModelParams::zeros(&params.config).unwrap();
        grads.head.weight[0] = f64::NAN;
        let mut state = AdamState::new(&params);
        assert!(adam_step(&mut params, &grads, &mut state, 0.1, 0.9, 0.999, 1e-8).is_err());
    }

    fn toy_samples(n: usize, cfg: &ModelConfig) -> Vec<GaitCycleSample> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        (0..n)
            .map(|i| {
                let label = (i % 2) as u8;
                let base = if label == 1 { 0.8 } else { 0.2 };
                GaitCycleSample {
                    subject_id: format!("s{i}"),
                    cycle_index: 0,
                    label,
                    features: (0..cfg.n_nodes)
                        .map(|_| {
                            (0..cfg.seq_len)
                                .map(|_| base + 0.1 * rng.random::<f64>())
                                .collect()
                        })
                        .collect(),
                }
            })
            .collect()
    }

    #[test]
    fn training_reduces_loss_and_is_deterministic() {
        let params = toy_model();
        let graph = SensorGraph::from_edges(2, vec![(0, 1)]).unwrap();
        let samples = toy_samples(16, &params.config);
        let config = TrainConfig {
            batch_size: 8,
            epochs: 12,
            learning_rate: 0.02,
            ..Default::default()
        };
        let a = train(params.clone(), &samples, &samples, &graph, &config).unwrap();
        assert_eq!(a.history.len(), 12);
        let first = a.history.first().unwrap().train_loss;
        let last = a.history.last().unwrap().train_loss;
        assert!(last < first, "loss did not drop: {first} -> {last}");

        let b = train(params, &samples, &samples, &graph, &config).unwrap();
        assert_eq!(a.history, b.history);
        assert_eq!(a.params, b.params);
        assert_eq!(a.best_epoch, b.best_epoch);
    }

    #[test]
    fn train_rejects_empty_set_and_bad_config() {
        let params = toy_model();
        let graph = SensorGraph::from_edges(2, vec![(0, 1)]).unwrap();
        assert!(train(params.clone(), &[], &[], &graph, &TrainConfig::default()).is_err());
        let samples = toy_samples(4, &params.config);
        let bad = TrainConfig { learning_rate: 0.0, ..Default::default() };
        assert!(train(params, &samples, &[], &graph, &bad).is_err());
    }
}
