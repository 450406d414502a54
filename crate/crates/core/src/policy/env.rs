//! Environments over the horizon action and parallel rollout collection.

use rand::Rng as _;

use super::net::{policy_forward, PolicyInput, PolicyParams};
use super::ppo::{compute_gae, PpoConfig, RolloutBuffer, Transition};
use super::reward::{compute_reward, RewardBreakdown, RewardCoeffs, StepOutcome};
use super::H_MAX;
use crate::config::SimConfig;
use crate::pipeline::{Navigator, Perception};
use crate::rng::{self, substream, Rng, Stream};
use crate::sensing::ROBOT_FEATURES;
use crate::sim::{spawn_scenario, Control, WorldState};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvStep {
    pub reward: RewardBreakdown,
    pub done: bool,
}

/// An episodic environment whose action is a prediction horizon in
/// `1..=H_MAX`. Finished episodes restart automatically.
pub trait HorizonEnv: Send {
    fn observation(&self) -> PolicyInput;
    fn step(&mut self, h: usize) -> EnvStep;
}

/// Draws an index from a categorical distribution.
pub fn sample_action(probs: &[f64], rng: &mut Rng) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// The full navigation stack with the horizon left to the agent. Episodes
/// cycle through `configs`; episode `n` is spawned from `mix(seed, n)`.
pub struct NavEnv {
    navigator: Navigator,
    configs: Vec<SimConfig>,
    seed: u64,
    episode: u64,
    world: WorldState,
    perception: Perception,
    pub mpc_failures: usize,
}

impl NavEnv {
    pub fn new(navigator: Navigator, configs: Vec<SimConfig>, seed: u64) -> crate::Result<Self> {
        assert!(!configs.is_empty());
        let mut nav = navigator;
        let world = Self::spawn(&mut nav, &configs, seed, 0)?;
        let perception = nav.perceive(&world);
        Ok(Self {
            navigator: nav,
            configs,
            seed,
            episode: 0,
            world,
            perception,
            mpc_failures: 0,
        })
    }

    fn spawn(nav: &mut Navigator, configs: &[SimConfig], seed: u64, episode: u64) -> crate::Result<WorldState> {
        let config = &configs[episode as usize % configs.len()];
        nav.config = config.clone();
        nav.reset();
        spawn_scenario(config, rng::mix(seed, episode))
    }

    pub fn world(&self) -> &WorldState {
        &self.world
    }
}

impl HorizonEnv for NavEnv {
    fn observation(&self) -> PolicyInput {
        self.perception.input.clone()
    }

    fn step(&mut self, h: usize) -> EnvStep {
        let result = self.navigator.step(&self.world, &self.perception, h);
        if result.degraded() {
            self.mpc_failures += 1;
        }
        let done = result.outcome.is_terminal();
        if done {
            self.episode += 1;
            self.world = Self::spawn(&mut self.navigator, &self.configs, self.seed, self.episode)
                .expect("configs spawned once already");
        } else {
            self.world = result.world;
        }
        self.perception = self.navigator.perceive(&self.world);
        EnvStep {
            reward: result.reward,
            done,
        }
    }
}

/// A bandit-like environment whose only reward is the horizon term; the
/// observations are random graphs so the policy cannot key on them.
pub struct HorizonOnlyEnv {
    coeffs: RewardCoeffs,
    episode_len: usize,
    t: usize,
    rng: Rng,
    obs: PolicyInput,
}

impl HorizonOnlyEnv {
    pub fn new(lambda_h: f64, episode_len: usize, seed: u64) -> Self {
        let mut rng = rng::stream(seed, Stream::Dataset);
        let obs = Self::random_obs(&mut rng);
        Self {
            coeffs: RewardCoeffs::horizon_only(lambda_h),
            episode_len: episode_len.max(1),
            t: 0,
            rng,
            obs,
        }
    }

    fn random_obs(rng: &mut Rng) -> PolicyInput {
        let mut robot = [0.0; ROBOT_FEATURES];
        robot.iter_mut().for_each(|v| *v = rng.gen_range(-1.0..1.0));
        let m = rng.gen_range(0..4);
        let peds = (0..m)
            .map(|_| {
                let mut p = [0.0; 5];
                p[..4].iter_mut().for_each(|v| *v = rng.gen_range(-1.0..1.0));
                p[4] = rng.gen_range(0..2) as f64;
                p
            })
            .collect();
        PolicyInput { robot, peds }
    }
}

impl HorizonEnv for HorizonOnlyEnv {
    fn observation(&self) -> PolicyInput {
        self.obs.clone()
    }

    fn step(&mut self, h: usize) -> EnvStep {
        self.t += 1;
        let done = self.t >= self.episode_len;
        let outcome = if done { StepOutcome::Timeout } else { StepOutcome::Running };
        let reward = compute_reward(0.0, 0.0, Control::ZERO, h, &[], outcome, &self.coeffs);
        if done {
            self.t = 0;
        }
        self.obs = Self::random_obs(&mut self.rng);
        EnvStep { reward, done }
    }
}

struct Slot<E> {
    env: E,
    rng: Rng,
    running_return: f64,
}

/// Parallel environments with persistent per-environment action streams, so
/// successive collections continue where the previous one stopped.
pub struct RolloutCollector<E> {
    slots: Vec<Slot<E>>,
}

impl<E: HorizonEnv> RolloutCollector<E> {
    /// Environment `i` samples actions from substream `(seed, i)`.
    pub fn new(envs: Vec<E>, seed: u64) -> Self {
        let slots = envs
            .into_iter()
            .enumerate()
            .map(|(i, env)| Slot {
                env,
                rng: substream(seed, i as u64, Stream::Actions),
                running_return: 0.0,
            })
            .collect();
        Self { slots }
    }

    pub fn envs(&self) -> impl Iterator<Item = &E> {
        self.slots.iter().map(|s| &s.env)
    }

    /// Runs `n_steps` steps in every environment and computes GAE per
    /// environment, bootstrapping unfinished segments with the value of the
    /// next observation. Transitions are ordered environment-major.
    pub fn collect(&mut self, params: &PolicyParams, n_steps: usize, cfg: &PpoConfig) -> RolloutBuffer {
        let per_env = crate::par::map_mut(&mut self.slots, |slot| {
            let mut transitions = Vec::with_capacity(n_steps);
            let mut finished = Vec::new();
            for _ in 0..n_steps {
                let input = slot.env.observation();
                let (out, _) = policy_forward(params, &input);
                let action = sample_action(&out.probs, &mut slot.rng);
                let step = slot.env.step(action + 1);
                slot.running_return += step.reward.total;
                if step.done {
                    finished.push(slot.running_return);
                    slot.running_return = 0.0;
                }
                transitions.push(Transition {
                    input,
                    action,
                    log_prob: out.probs[action].ln(),
                    value: out.value,
                    reward: step.reward,
                    done: step.done,
                    advantage: 0.0,
                    ret: 0.0,
                });
            }
            let last_value = if n_steps > 0 {
                policy_forward(params, &slot.env.observation()).0.value
            } else {
                0.0
            };
            compute_gae(&mut transitions, last_value, cfg.gamma, cfg.gae_lambda);
            (transitions, finished)
        });
        let mut buffer = RolloutBuffer::default();
        for (t, f) in per_env {
            buffer.transitions.extend(t);
            buffer.episode_returns.extend(f);
        }
        buffer
    }
}

/// One-shot collection from fresh collectors.
pub fn collect_rollouts<E: HorizonEnv>(envs: Vec<E>, params: &PolicyParams, n_steps: usize, seed: u64, cfg: &PpoConfig) -> RolloutBuffer {
    RolloutCollector::new(envs, seed).collect(params, n_steps, cfg)
}

const _: () = assert!(H_MAX >= 1);
