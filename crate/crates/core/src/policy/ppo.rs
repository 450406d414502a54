//! Proximal policy optimization over the discrete horizon action.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::net::{policy_backward, policy_forward, PolicyInput, PolicyParams};
use super::reward::RewardBreakdown;
use crate::nn::{Adam, AdamConfig, Parameters};
use crate::rng::{stream, Rng, Stream};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PpoConfig {
    pub gamma: f64,
    pub gae_lambda: f64,
    pub clip: f64,
    pub lr: f64,
    pub epochs: usize,
    pub minibatch: usize,
    pub entropy_coeff: f64,
    pub value_coeff: f64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            gae_lambda: 0.95,
            clip: 0.2,
            lr: 3e-4,
            epochs: 4,
            minibatch: 64,
            entropy_coeff: 0.01,
            value_coeff: 0.5,
        }
    }
}

/// One environment step. `action` is the zero-based index, so the horizon
/// is `action + 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub input: PolicyInput,
    pub action: usize,
    pub log_prob: f64,
    pub value: f64,
    pub reward: RewardBreakdown,
    pub done: bool,
    pub advantage: f64,
    pub ret: f64,
}

impl Transition {
    pub fn horizon(&self) -> usize {
        self.action + 1
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RolloutBuffer {
    pub transitions: Vec<Transition>,
    /// Undiscounted returns of episodes that finished during collection.
    pub episode_returns: Vec<f64>,
}

impl RolloutBuffer {
    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn mean_horizon(&self) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        self.transitions.iter().map(|t| t.horizon() as f64).sum::<f64>() / self.len() as f64
    }
}

/// Generalized advantage estimation over one contiguous environment
/// segment; `last_value` bootstraps a segment cut before termination.
pub fn compute_gae(segment: &mut [Transition], last_value: f64, gamma: f64, lambda: f64) {
    let mut next_value = last_value;
    let mut acc = 0.0;
    for t in segment.iter_mut().rev() {
        let (nv, carry) = if t.done { (0.0, 0.0) } else { (next_value, acc) };
        let delta = t.reward.total + gamma * nv - t.value;
        acc = delta + gamma * lambda * carry;
        t.advantage = acc;
        t.ret = acc + t.value;
        next_value = t.value;
    }
}

/// Standardizes advantages to mean 0, std 1 (std guarded below by 1e-8).
pub fn normalize_advantages(transitions: &mut [Transition]) {
    let n = transitions.len();
    if n == 0 {
        return;
    }
    let mean = transitions.iter().map(|t| t.advantage).sum::<f64>() / n as f64;
    let var = transitions.iter().map(|t| (t.advantage - mean).powi(2)).sum::<f64>() / n as f64;
    let std = var.sqrt().max(1e-8);
    for t in transitions {
        t.advantage = (t.advantage - mean) / std;
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PpoLoss {
    pub total: f64,
    pub policy: f64,
    pub value: f64,
    pub entropy: f64,
    /// Mean of the unclipped surrogate ratio·A.
    pub surrogate: f64,
    pub clip_fraction: f64,
}

/// Clipped-surrogate loss on a minibatch and, if `grads` is given, its
/// gradient accumulated into it:
/// `−mean(min(ρA, clip(ρ)A)) + c_v·mean((V−R)²) − c_e·mean(H)`.
pub fn ppo_loss(params: &PolicyParams, batch: &[&Transition], cfg: &PpoConfig, mut grads: Option<&mut PolicyParams>) -> PpoLoss {
    let n = batch.len().max(1) as f64;
    let mut out = PpoLoss::default();
    for t in batch {
        let (o, cache) = policy_forward(params, &t.input);
        let logp: Vec<f64> = o.probs.iter().map(|p| p.max(1e-300).ln()).collect();
        let ratio = (logp[t.action] - t.log_prob).exp();
        let a = t.advantage;
        let clipped = ratio.clamp(1.0 - cfg.clip, 1.0 + cfg.clip);
        let unclipped_active = ratio * a <= clipped * a;
        let surr = if unclipped_active { ratio * a } else { clipped * a };
        let entropy = -o.probs.iter().zip(&logp).map(|(p, l)| p * l).sum::<f64>();
        let verr = o.value - t.ret;
        out.policy -= surr / n;
        out.value += verr * verr / n;
        out.entropy += entropy / n;
        out.surrogate += ratio * a / n;
        if !unclipped_active {
            out.clip_fraction += 1.0 / n;
        }
        if let Some(g) = grads.as_deref_mut() {
            let g_surr = if unclipped_active { a * ratio } else { 0.0 };
            let dlogits: Vec<f64> = (0..o.probs.len())
                .map(|j| {
                    let onehot = if j == t.action { 1.0 } else { 0.0 };
                    let dsurr = g_surr * (onehot - o.probs[j]);
                    let dent = -o.probs[j] * (logp[j] + entropy);
                    (-dsurr - cfg.entropy_coeff * dent) / n
                })
                .collect();
            let dvalue = cfg.value_coeff * 2.0 * verr / n;
            policy_backward(params, &cache, &dlogits, dvalue, g);
        }
    }
    out.total = out.policy + cfg.value_coeff * out.value - cfg.entropy_coeff * out.entropy;
    out
}

/// Policy parameters with their optimizer state, kept across updates.
pub struct PpoTrainer {
    pub params: PolicyParams,
    pub cfg: PpoConfig,
    adam: Adam,
    rng: Rng,
}

impl PpoTrainer {
    pub fn new(params: PolicyParams, cfg: PpoConfig, seed: u64) -> Self {
        let adam = Adam::new(&params, AdamConfig::with_lr(cfg.lr));
        Self {
            params,
            cfg,
            adam,
            rng: stream(seed, Stream::Shuffle),
        }
    }

    /// Runs `epochs` passes of shuffled minibatch updates. Returns the mean
    /// loss over all minibatches.
    pub fn update(&mut self, buffer: &mut RolloutBuffer) -> Result<PpoLoss> {
        normalize_advantages(&mut buffer.transitions);
        let n = buffer.len();
        let mut mean = PpoLoss::default();
        if n == 0 {
            return Ok(mean);
        }
        let mut order: Vec<usize> = (0..n).collect();
        let mut count = 0.0;
        for epoch in 0..self.cfg.epochs {
            order.shuffle(&mut self.rng);
            for chunk in order.chunks(self.cfg.minibatch.max(1)) {
                let batch: Vec<&Transition> = chunk.iter().map(|&i| &buffer.transitions[i]).collect();
                let mut grads = PolicyParams::zeros(self.params.dims);
                let loss = ppo_loss(&self.params, &batch, &self.cfg, Some(&mut grads));
                if !loss.total.is_finite() || !grads.is_finite() {
                    return Err(Error::NonFiniteLoss {
                        loss: loss.total,
                        context: format!(
                            "ppo epoch {epoch}: policy {} value {} entropy {}",
                            loss.policy, loss.value, loss.entropy
                        ),
                    });
                }
                self.adam.step(&mut self.params, &grads);
                count += 1.0;
                mean.total += loss.total;
                mean.policy += loss.policy;
                mean.value += loss.value;
                mean.entropy += loss.entropy;
                mean.surrogate += loss.surrogate;
                mean.clip_fraction += loss.clip_fraction;
            }
        }
        for v in [
            &mut mean.total,
            &mut mean.policy,
            &mut mean.value,
            &mut mean.entropy,
            &mut mean.surrogate,
            &mut mean.clip_fraction,
        ] {
            *v /= count;
        }
        Ok(mean)
    }
}

#[cfg(test)]
mod tests {
    use super::super::net::{tests::random_input, PolicyDims};
    use super::*;
    use crate::nn::grad_check;
    use rand::{Rng as _, SeedableRng};

    fn reward(total: f64) -> RewardBreakdown {
        RewardBreakdown {
            term: total,
            total,
            ..Default::default()
        }
    }

    fn toy_buffer(params: &PolicyParams, seed: u64) -> Vec<Transition> {
        let mut rng = Rng::seed_from_u64(seed);
        // log-prob offsets put one ratio beyond each clip bound
        let offsets = [0.05, -0.4, 0.4, -0.08];
        let advs = [1.3, -0.7, 0.9, -1.1];
        (0..4)
            .map(|i| {
                let input = random_input(&mut rng, 1 + i % 3);
                let (o, _) = policy_forward(params, &input);
                let action = rng.gen_range(0..params.dims.h_max);
                Transition {
                    input,
                    action,
                    log_prob: o.probs[action].ln() + offsets[i],
                    value: o.value,
                    reward: reward(0.0),
                    done: false,
                    advantage: advs[i],
                    ret: rng.gen_range(-1.0..1.0),
                }
            })
            .collect()
    }

    fn small_params(seed: u64) -> PolicyParams {
        let mut p = PolicyParams::init(PolicyDims { d: 6, h_max: 5 }, seed);
        let mut rng = Rng::seed_from_u64(seed + 100);
        p.w_pi.mapv_inplace(|_| rng.gen_range(-0.5..0.5));
        p
    }

    #[test]
    fn ppo_gradient_matches_finite_differences() {
        let cfg = PpoConfig::default();
        for seed in 0..3 {
            let params = small_params(seed);
            let buf = toy_buffer(&params, seed);
            let batch: Vec<&Transition> = buf.iter().collect();
            let mut grads = PolicyParams::zeros(params.dims);
            ppo_loss(&params, &batch, &cfg, Some(&mut grads));
            let check = grad_check(&params, &grads, 1e-5, 1, |p| ppo_loss(p, &batch, &cfg, None).total);
            assert!(check.max_rel_error < 1e-4, "{check:?}");
        }
    }

    #[test]
    fn unit_ratio_surrogate_is_mean_advantage() {
        let params = small_params(4);
        let mut buf = toy_buffer(&params, 4);
        for t in &mut buf {
            let (o, _) = policy_forward(&params, &t.input);
            t.log_prob = o.probs[t.action].ln();
        }
        let batch: Vec<&Transition> = buf.iter().collect();
        let loss = ppo_loss(&params, &batch, &PpoConfig::default(), None);
        let mean_adv = buf.iter().map(|t| t.advantage).sum::<f64>() / 4.0;
        assert!((loss.surrogate - mean_adv).abs() < 1e-12);
        assert!((loss.policy + mean_adv).abs() < 1e-12);
    }

    #[test]
    fn zero_advantage_leaves_only_value_and_entropy() {
        let params = small_params(5);
        let mut buf = toy_buffer(&params, 5);
        buf.iter_mut().for_each(|t| t.advantage = 0.0);
        let batch: Vec<&Transition> = buf.iter().collect();
        let cfg = PpoConfig {
            entropy_coeff: 0.0,
            value_coeff: 0.0,
            ..Default::default()
        };
        let mut g = PolicyParams::zeros(params.dims);
        ppo_loss(&params, &batch, &cfg, Some(&mut g));
        assert!(g.flat().iter().all(|&v| v == 0.0));
        // with the value term on, only parameters feeding the value head move
        let cfg = PpoConfig {
            entropy_coeff: 0.0,
            ..Default::default()
        };
        let mut g = PolicyParams::zeros(params.dims);
        ppo_loss(&params, &batch, &cfg, Some(&mut g));
        assert!(g.w_pi.iter().chain(g.b_pi.iter()).all(|&v| v == 0.0));
        assert!(g.w_val.iter().any(|&v| v != 0.0));
    }

    #[test]
    fn gae_single_terminal_step() {
        let mut seg = vec![Transition {
            input: PolicyInput {
                robot: [0.0; 9],
                peds: vec![],
            },
            action: 0,
            log_prob: 0.0,
            value: 0.8,
            reward: reward(-20.4),
            done: true,
            advantage: 0.0,
            ret: 0.0,
        }];
        compute_gae(&mut seg, 123.0, 0.99, 0.95);
        assert_eq!(seg[0].ret, -20.4);
        assert!((seg[0].advantage - (-21.2)).abs() < 1e-12);
    }

    #[test]
    fn gae_matches_discounted_sum_at_unit_lambda() {
        let mut rng = Rng::seed_from_u64(9);
        let mut seg: Vec<Transition> = (0..6)
            .map(|_| Transition {
                input: PolicyInput {
                    robot: [0.0; 9],
                    peds: vec![],
                },
                action: 0,
                log_prob: 0.0,
                value: rng.gen_range(-1.0..1.0),
                reward: reward(rng.gen_range(-1.0..1.0)),
                done: false,
                advantage: 0.0,
                ret: 0.0,
            })
            .collect();
        let last = 0.37;
        compute_gae(&mut seg, last, 0.9, 1.0);
        // λ = 1: return is the plain discounted reward sum with bootstrap
        let mut g = last;
        for t in seg.iter().rev() {
            g = t.reward.total + 0.9 * g;
            assert!((t.ret - g).abs() < 1e-12);
        }
    }

    #[test]
    fn normalization_guards_zero_std() {
        let params = small_params(6);
        let mut buf = toy_buffer(&params, 6);
        buf.iter_mut().for_each(|t| t.advantage = 2.5);
        normalize_advantages(&mut buf);
        assert!(buf.iter().all(|t| t.advantage == 0.0));
        let mut buf = toy_buffer(&params, 6);
        normalize_advantages(&mut buf);
        let m: f64 = buf.iter().map(|t| t.advantage).sum::<f64>() / 4.0;
        let v: f64 = buf.iter().map(|t| t.advantage * t.advantage).sum::<f64>() / 4.0;
        assert!(m.abs() < 1e-12 && (v - 1.0).abs() < 1e-9);
    }
}
