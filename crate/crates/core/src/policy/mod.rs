//! Horizon selection: rewards, the graph-conditioned policy, PPO and
//! rollout collection.

pub mod env;
pub mod net;
pub mod ppo;
pub mod reward;
pub mod train;

/// Largest selectable prediction horizon.
pub const H_MAX: usize = 10;

pub use env::{collect_rollouts, HorizonEnv, HorizonOnlyEnv, NavEnv, RolloutCollector};
pub use net::{encode_observation, policy_forward, PolicyDims, PolicyInput, PolicyParams};
pub use ppo::{compute_gae, ppo_loss, PpoConfig, PpoLoss, PpoTrainer, RolloutBuffer, Transition};
pub use reward::{compute_reward, RewardBreakdown, RewardCoeffs, StepOutcome};
pub use train::{greedy_horizon, mean_probability, train_policy, write_curve, PolicyTrainConfig, UpdateLog};
