use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::env::{HorizonEnv, RolloutCollector};
use super::net::{policy_forward, PolicyDims, PolicyInput, PolicyParams};
use super::ppo::{PpoConfig, PpoLoss, PpoTrainer};
use crate::tensor_io::{self, ParamKind};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PolicyTrainConfig {
    pub ppo: PpoConfig,
    pub dims: PolicyDims,
    pub n_envs: usize,
    /// Steps per environment between updates.
    pub steps_per_env: usize,
    pub updates: usize,
    pub seed: u64,
}

impl Default for PolicyTrainConfig {
    fn default() -> Self {
        Self {
            ppo: PpoConfig::default(),
            dims: PolicyDims::default(),
            n_envs: 8,
            steps_per_env: 64,
            updates: 200,
            seed: 0,
        }
    }
}

/// One row of the learning curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UpdateLog {
    pub update: usize,
    /// Mean undiscounted return of episodes finished during collection
    /// (NaN if none finished).
    pub mean_return: f64,
    pub mean_horizon: f64,
    pub loss: PpoLoss,
}

pub const CURVE_HEADER: &str = "update,mean_return,mean_horizon,loss,policy_loss,value_loss,entropy,clip_fraction";

impl UpdateLog {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.update,
            self.mean_return,
            self.mean_horizon,
            self.loss.total,
            self.loss.policy,
            self.loss.value,
            self.loss.entropy,
            self.loss.clip_fraction
        )
    }
}

pub fn write_curve(path: &Path, curve: &[UpdateLog]) -> Result<()> {
    let mut out = String::from(CURVE_HEADER);
    out.push('\n');
    for row in curve {
        out.push_str(&row.csv_row());
        out.push('\n');
    }
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(out.as_bytes()))
        .map_err(|e| Error::io(path, e))
}

/// Alternates collection and PPO updates; `on_update` sees every row as it
/// is produced and may stop training early by returning `false`.
pub fn train_policy<E: HorizonEnv>(
    envs: Vec<E>,
    config: &PolicyTrainConfig,
    mut on_update: impl FnMut(&UpdateLog, &PolicyParams) -> bool,
) -> Result<(PolicyParams, Vec<UpdateLog>)> {
    let mut collector = RolloutCollector::new(envs, config.seed);
    let mut trainer = PpoTrainer::new(PolicyParams::init(config.dims, config.seed), config.ppo, config.seed);
    let mut curve = Vec::with_capacity(config.updates);
    for update in 0..config.updates {
        let mut buffer = collector.collect(&trainer.params, config.steps_per_env, &config.ppo);
        let mean_horizon = buffer.mean_horizon();
        let mean_return = if buffer.episode_returns.is_empty() {
            f64::NAN
        } else {
            buffer.episode_returns.iter().sum::<f64>() / buffer.episode_returns.len() as f64
        };
        let loss = trainer.update(&mut buffer)?;
        let row = UpdateLog {
            update,
            mean_return,
            mean_horizon,
            loss,
        };
        curve.push(row);
        if !on_update(&row, &trainer.params) {
            break;
        }
    }
    Ok((trainer.params, curve))
}

/// Mean probability the policy assigns to horizon `h` over `inputs`.
pub fn mean_probability(params: &PolicyParams, inputs: &[PolicyInput], h: usize) -> f64 {
    inputs.iter().map(|x| policy_forward(params, x).0.probs[h - 1]).sum::<f64>() / inputs.len().max(1) as f64
}

/// Most probable horizon.
pub fn greedy_horizon(params: &PolicyParams, input: &PolicyInput) -> usize {
    let (out, _) = policy_forward(params, input);
    out.probs
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(&a.0)))
        .map_or(1, |(i, _)| i + 1)
}

impl PolicyParams {
    pub fn save(&self, path: &Path) -> Result<()> {
        tensor_io::save(path, ParamKind::Policy, &self.dims.to_header(), self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        tensor_io::load(path, ParamKind::Policy, |h| PolicyDims::from_header(h).map(PolicyParams::zeros))
    }
}
