use ndarray::Array2;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::gumbel::{gumbel_select, with_self_loops};
use super::net::{forward, loss_and_grad, CoopDims, CoopNetParams, CoopSample};
use crate::error::{Error, Result};
use crate::nn::{Adam, AdamConfig, Parameters};
use crate::rng::{self, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CoopTrainConfig {
    pub batch_size: usize,
    pub lr: f64,
    pub epochs: usize,
    /// Gumbel temperature at the first epoch, annealed linearly to
    /// `temperature_end` at the last.
    pub temperature_start: f64,
    pub temperature_end: f64,
    pub eps: f64,
    pub seed: u64,
}

impl Default for CoopTrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            lr: 1e-3,
            epochs: 50,
            temperature_start: 1.0,
            temperature_end: 0.5,
            eps: 1e-6,
            seed: 0,
        }
    }
}

impl CoopTrainConfig {
    pub fn temperature(&self, epoch: usize) -> f64 {
        if self.epochs <= 1 {
            return self.temperature_start;
        }
        let f = epoch as f64 / (self.epochs - 1) as f64;
        self.temperature_start + (self.temperature_end - self.temperature_start) * f
    }
}

/// Temperature of the noise-free selection used at inference.
pub const INFERENCE_TEMPERATURE: f64 = 0.5;
pub const SELECTION_EPS: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct TrainedCoop {
    pub params: CoopNetParams,
    /// Mean minibatch loss of each epoch.
    pub loss_curve: Vec<f64>,
}

/// Deterministic selection matrix used at inference.
pub fn inference_selection(sample: &CoopSample) -> Array2<f64> {
    gumbel_select(&with_self_loops(&sample.adjacency), INFERENCE_TEMPERATURE, SELECTION_EPS, None)
}

/// Cooperation probability of every pedestrian in the sample.
pub fn predict(params: &CoopNetParams, sample: &CoopSample) -> Vec<f64> {
    let (probs, _) = forward(params, sample, &inference_selection(sample));
    probs.column(1).to_vec()
}

/// Fraction of pedestrians whose thresholded prediction matches the label.
pub fn accuracy(params: &CoopNetParams, samples: &[CoopSample]) -> f64 {
    let (mut right, mut total) = (0usize, 0usize);
    for s in samples {
        for (p, &y) in predict(params, s).iter().zip(&s.labels) {
            right += ((*p >= 0.5) as u8 == y) as usize;
            total += 1;
        }
    }
    if total == 0 {
        0.0
    } else {
        right as f64 / total as f64
    }
}

/// Minibatch Adam on the cross-entropy. Gumbel noise is drawn afresh for
/// each sample in the forward pass and held fixed for its backward pass.
pub fn train_coop(dataset: &[CoopSample], dims: CoopDims, config: &CoopTrainConfig) -> Result<TrainedCoop> {
    train_from(CoopNetParams::init(dims, config.seed), dataset, config)
}

pub fn train_from(mut params: CoopNetParams, dataset: &[CoopSample], config: &CoopTrainConfig) -> Result<TrainedCoop> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if config.batch_size == 0 || !(config.temperature_start > 0.0 && config.temperature_end > 0.0 && config.eps > 0.0) {
        return Err(Error::Config(format!("invalid coop training config {config:?}")));
    }
    let mut adam = Adam::new(&params, AdamConfig::with_lr(config.lr));
    let mut noise = rng::stream(config.seed, Stream::Gumbel);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut loss_curve = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let temperature = config.temperature(epoch);
        order.shuffle(&mut rng::substream(config.seed, epoch as u64, Stream::Shuffle));
        let mut total = 0.0;
        let mut batches = 0;
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            let samples: Vec<&CoopSample> = chunk.iter().map(|&i| &dataset[i]).collect();
            let selections: Vec<Array2<f64>> = samples
                .iter()
                .map(|s| gumbel_select(&with_self_loops(&s.adjacency), temperature, config.eps, Some(&mut noise)))
                .collect();
            let (loss, grads) = loss_and_grad(&params, &samples, &selections);
            if !loss.is_finite() || !grads.is_finite() {
                return Err(Error::NonFiniteLoss {
                    loss,
                    context: format!("epoch {epoch}, batch {b}"),
                });
            }
            adam.step(&mut params, &grads);
            total += loss;
            batches += 1;
        }
        loss_curve.push(total / batches as f64);
    }
    Ok(TrainedCoop { params, loss_curve })
}
