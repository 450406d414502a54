//! Finite-difference gradient suites for the two hand-differentiated
//! networks, on random small instances.

use glam::DVec2;
use ndarray::Array2;
use rand::{Rng as _, SeedableRng};
use serde::Serialize;

use crate::coop::{gumbel_select, loss_and_grad, with_self_loops, CoopDims, CoopNetParams, CoopSample};
use crate::nn::{grad_check, GradCheck};
use crate::policy::net::{policy_forward, PolicyDims, PolicyInput, PolicyParams, PED_FEATURES};
use crate::policy::ppo::{ppo_loss, PpoConfig, Transition};
use crate::policy::RewardBreakdown;
use crate::rng::{stream, Rng, Stream};
use crate::sensing::{adjacency_from_positions, ROBOT_FEATURES};

/// Relative-error tolerance of every suite.
pub const TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, Serialize)]
pub struct SuiteResult {
    pub name: &'static str,
    pub instances: usize,
    pub checked: usize,
    pub max_rel_error: f64,
}

impl SuiteResult {
    pub fn passed(&self) -> bool {
        self.max_rel_error < TOLERANCE
    }
}

fn merge(name: &'static str, checks: &[GradCheck]) -> SuiteResult {
    SuiteResult {
        name,
        instances: checks.len(),
        checked: checks.iter().map(|c| c.checked).sum(),
        max_rel_error: checks.iter().map(|c| c.max_rel_error).fold(0.0, f64::max),
    }
}

/// Random walk tracks of `m` pedestrians over `l` steps; pedestrian 1 (if
/// any) misses its first step.
pub fn random_coop_sample(rng: &mut Rng, m: usize, l: usize) -> CoopSample {
    let trajectories: Vec<Vec<DVec2>> = (0..m)
        .map(|_| {
            let mut p = DVec2::new(rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0));
            (0..l)
                .map(|_| {
                    p += DVec2::new(rng.gen_range(-0.3..0.3), rng.gen_range(-0.3..0.3));
                    p
                })
                .collect()
        })
        .collect();
    let valid = (0..m).map(|i| (0..l).map(|j| j > 0 || i != 1).collect()).collect();
    let last: Vec<DVec2> = trajectories.iter().map(|t| *t.last().expect("l ≥ 1")).collect();
    CoopSample {
        adjacency: adjacency_from_positions(&last, 2.0),
        labels: (0..m).map(|_| rng.gen_range(0..2)).collect(),
        trajectories,
        valid,
    }
}

/// Cooperation loss (embedding, Gumbel-selected attention, pooling and
/// classifier) against central differences, batches of 1–3 pedestrians.
pub fn coop_suite(seed: u64, instances: usize) -> SuiteResult {
    let mut rng = Rng::seed_from_u64(seed);
    let checks: Vec<GradCheck> = (0..instances)
        .map(|k| {
            let dims = CoopDims {
                history_len: 4,
                d: 8,
                d_ff: 6,
                n_layers: 2,
            };
            let params = CoopNetParams::init(dims, seed.wrapping_add(k as u64));
            let samples: Vec<CoopSample> = (0..2)
                .map(|_| {
                    let m = rng.gen_range(1..=3);
                    random_coop_sample(&mut rng, m, dims.history_len)
                })
                .collect();
            let mut noise = stream(seed.wrapping_add(k as u64), Stream::Gumbel);
            let es: Vec<Array2<f64>> = samples
                .iter()
                .map(|s| gumbel_select(&with_self_loops(&s.adjacency), 1.0, 1e-6, Some(&mut noise)))
                .collect();
            let refs: Vec<&CoopSample> = samples.iter().collect();
            let (_, grads) = loss_and_grad(&params, &refs, &es);
            grad_check(&params, &grads, 1e-5, 1, |p| loss_and_grad(p, &refs, &es).0)
        })
        .collect();
    merge("coop-net loss", &checks)
}

fn random_input(rng: &mut Rng, m: usize) -> PolicyInput {
    let mut robot = [0.0; ROBOT_FEATURES];
    robot.iter_mut().for_each(|v| *v = rng.gen_range(-1.0..1.0));
    let peds = (0..m)
        .map(|_| {
            let mut p = [0.0; PED_FEATURES];
            p[..4].iter_mut().for_each(|v| *v = rng.gen_range(-1.0..1.0));
            p[4] = rng.gen_range(0..2) as f64;
            p
        })
        .collect();
    PolicyInput { robot, peds }
}

/// Four transitions whose stored log-probabilities are offset so that the
/// ratios fall inside and on both sides of the clip interval.
pub fn toy_ppo_buffer(params: &PolicyParams, rng: &mut Rng) -> Vec<Transition> {
    let offsets = [0.05, -0.4, 0.4, -0.08];
    (0..4)
        .map(|i| {
            let m = rng.gen_range(0..=3);
            let input = random_input(rng, m);
            let (o, _) = policy_forward(params, &input);
            let action = rng.gen_range(0..params.dims.h_max);
            Transition {
                input,
                action,
                log_prob: o.probs[action].ln() + offsets[i],
                value: o.value,
                reward: RewardBreakdown::default(),
                done: false,
                advantage: rng.gen_range(-1.5..1.5),
                ret: rng.gen_range(-1.0..1.0),
            }
        })
        .collect()
}

/// Full PPO loss (clipped surrogate, value and entropy terms) on 4-transition
/// buffers with d = 8.
pub fn ppo_suite(seed: u64, instances: usize) -> SuiteResult {
    let mut rng = Rng::seed_from_u64(seed);
    let cfg = PpoConfig::default();
    let checks: Vec<GradCheck> = (0..instances)
        .map(|k| {
            let mut params = PolicyParams::init(PolicyDims { d: 8, h_max: 5 }, seed.wrapping_add(k as u64));
            params.w_pi.mapv_inplace(|_| rng.gen_range(-0.5..0.5));
            let buffer = toy_ppo_buffer(&params, &mut rng);
            let batch: Vec<&Transition> = buffer.iter().collect();
            let mut grads = PolicyParams::zeros(params.dims);
            ppo_loss(&params, &batch, &cfg, Some(&mut grads));
            grad_check(&params, &grads, 1e-5, 1, |p| ppo_loss(p, &batch, &cfg, None).total)
        })
        .collect();
    merge("PPO loss", &checks)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suites_pass() {
        let c = coop_suite(1, 2);
        assert!(c.passed(), "{c:?}");
        let p = ppo_suite(1, 2);
        assert!(p.passed(), "{p:?}");
    }
}
