//! Per-step reward: terminal, potential, kinematic, horizon and
//! visibility-social terms.

use serde::{Deserialize, Serialize};

use crate::sim::Control;

use super::H_MAX;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardCoeffs {
    pub goal: f64,
    pub failure: f64,
    pub lambda_h: f64,
    pub lambda_pot: f64,
    pub lambda_r: f64,
    pub lambda_v: f64,
    /// Negative: long horizons are penalized in non-cooperative crowds.
    pub lambda_high: f64,
    pub lambda_low: f64,
    pub eta_high: f64,
    pub eta_low: f64,
}

impl Default for RewardCoeffs {
    fn default() -> Self {
        Self {
            goal: 10.0,
            failure: -20.0,
            lambda_h: 0.01,
            lambda_pot: 2.0,
            lambda_r: 0.05,
            lambda_v: 0.25,
            lambda_high: -0.1,
            lambda_low: 0.05,
            eta_high: 1.0,
            eta_low: 1.0,
        }
    }
}

impl RewardCoeffs {
    /// Only the horizon term is active.
    pub fn horizon_only(lambda_h: f64) -> Self {
        Self {
            goal: 0.0,
            failure: 0.0,
            lambda_h,
            lambda_pot: 0.0,
            lambda_r: 0.0,
            lambda_v: 0.0,
            lambda_high: 0.0,
            lambda_low: 0.0,
            eta_high: 1.0,
            eta_low: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StepOutcome {
    Running,
    Goal,
    Collision,
    Timeout,
}

impl StepOutcome {
    pub fn is_terminal(self) -> bool {
        self != StepOutcome::Running
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub term: f64,
    pub pot: f64,
    pub kin: f64,
    pub horizon: f64,
    pub vis_social: f64,
    pub total: f64,
}

impl RewardBreakdown {
    fn new(term: f64, pot: f64, kin: f64, horizon: f64, vis_social: f64) -> Self {
        Self {
            term,
            pot,
            kin,
            horizon,
            vis_social,
            total: term + pot + kin + horizon + vis_social,
        }
    }
}

/// Fraction of visible pedestrians labelled non-cooperative; 0 when none
/// are visible.
pub fn no_coop_fraction(labels: &[u8]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    labels.iter().filter(|&&c| c == 0).count() as f64 / labels.len() as f64
}

/// Reward for one transition. `prev_distance` and `distance` are the robot's
/// goal distances before and after the step; `labels` are the cooperation
/// labels of the pedestrians visible when `h` was chosen.
pub fn compute_reward(
    prev_distance: f64,
    distance: f64,
    u: Control,
    h: usize,
    labels: &[u8],
    outcome: StepOutcome,
    coeffs: &RewardCoeffs,
) -> RewardBreakdown {
    let term = match outcome {
        StepOutcome::Goal => coeffs.goal,
        StepOutcome::Collision | StepOutcome::Timeout => coeffs.failure,
        StepOutcome::Running => 0.0,
    };
    let pot = -coeffs.lambda_pot * (distance - prev_distance);
    let kin = -coeffs.lambda_r * u.w * u.w - coeffs.lambda_v * (-u.v).max(0.0);
    let horizon = -coeffs.lambda_h * (H_MAX as f64 - h as f64);
    let rho = no_coop_fraction(labels);
    let hf = h as f64;
    let vis_social = if rho > 0.5 {
        coeffs.lambda_high * hf.powf(coeffs.eta_high) * rho
    } else {
        coeffs.lambda_low * hf.powf(coeffs.eta_low) * (1.0 - rho)
    };
    RewardBreakdown::new(term, pot, kin, horizon, vis_social)
}
