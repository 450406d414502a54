//! Variable-horizon MPC with a socially weighted cost and discrete-time
//! control barrier constraints, solved by sequential convexification.

mod problem;
pub mod qp;
mod solver;

use glam::DVec2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use problem::{build_mpc, Evaluation, MpcProblem, PlannerPedestrian, Pose};
pub use solver::{control_lattice, solve_mpc, MpcSolution, SolveStatus};

/// Safety distance parameters of the barrier function.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SafetyMargins {
    pub d0: f64,
    pub d_coop: f64,
    pub d_noncoop: f64,
    /// Barrier decay rate in (0, 1].
    pub gamma: f64,
}

impl Default for SafetyMargins {
    fn default() -> Self {
        Self {
            d0: 0.1,
            d_coop: 0.1,
            d_noncoop: 0.4,
            gamma: 0.3,
        }
    }
}

impl SafetyMargins {
    /// `d0 + c·d_coop + (1 − c)·d_noncoop` for a hard label `c`.
    pub fn d_safety(&self, label: u8) -> f64 {
        if label == 1 {
            self.d0 + self.d_coop
        } else {
            self.d0 + self.d_noncoop
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.d0 >= 0.0
            && self.d_coop >= 0.0
            && self.d_noncoop >= self.d_coop
            && self.gamma > 0.0
            && self.gamma <= 1.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid safety margins {self:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MpcWeights {
    /// State error weight over (x, y, heading).
    pub q: [[f64; 3]; 3],
    pub q_terminal: [[f64; 3]; 3],
    /// Control weight over (v, w).
    pub r: [[f64; 2]; 2],
    /// Social cost scale, shared by all pedestrians.
    pub eta: f64,
    pub sigma_coop: f64,
    pub sigma_noncoop: f64,
    pub slack_penalty: f64,
}

impl Default for MpcWeights {
    fn default() -> Self {
        let q = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 0.1]];
        let mut q_terminal = q;
        q_terminal.iter_mut().flatten().for_each(|v| *v *= 5.0);
        Self {
            q,
            q_terminal,
            r: [[0.1, 0.0], [0.0, 0.05]],
            eta: 1.0,
            sigma_coop: 0.6,
            sigma_noncoop: 1.2,
            slack_penalty: 1e4,
        }
    }
}

impl MpcWeights {
    pub fn validate(&self) -> Result<()> {
        let sym3 = |m: &[[f64; 3]; 3]| (0..3).all(|i| (0..3).all(|j| m[i][j] == m[j][i]));
        let ok = sym3(&self.q)
            && sym3(&self.q_terminal)
            && self.r[0][1] == self.r[1][0]
            && self.r[0][0] > 0.0
            && self.r[0][0] * self.r[1][1] - self.r[0][1] * self.r[1][0] > 0.0
            && self.eta >= 0.0
            && self.sigma_coop > 0.0
            && self.sigma_noncoop > self.sigma_coop
            && self.slack_penalty > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid MPC weights {self:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSettings {
    pub max_sqp_iterations: usize,
    pub trust_region: f64,
    pub trust_shrink: f64,
    pub tolerance: f64,
    /// Levenberg damping added to the Gauss–Newton Hessian.
    pub damping: f64,
    /// Padding of the state box around the spawn circle (m).
    pub arena_padding: f64,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            max_sqp_iterations: 5,
            trust_region: 0.5,
            trust_shrink: 0.5,
            tolerance: 1e-4,
            damping: 1e-6,
            arena_padding: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MpcSettings {
    pub margins: SafetyMargins,
    pub weights: MpcWeights,
    pub solver: SolverSettings,
}

impl MpcSettings {
    pub fn validate(&self) -> Result<()> {
        self.margins.validate()?;
        self.weights.validate()?;
        if self.solver.max_sqp_iterations == 0 || !(self.solver.trust_region > 0.0) {
            return Err(Error::Config("invalid solver settings".into()));
        }
        Ok(())
    }
}

/// Constant-velocity projection `p + k·dt·v` for k = 1..=h.
pub fn project_pedestrians(position: DVec2, velocity: DVec2, horizon: usize, dt: f64) -> Vec<DVec2> {
    (1..=horizon).map(|k| position + velocity * (k as f64 * dt)).collect()
}

/// Barrier value `‖p_r − p_i‖ − (r_r + r_i + d_safety(c))`.
pub fn barrier_value(p_r: DVec2, p_i: DVec2, r_r: f64, r_i: f64, label: u8, margins: &SafetyMargins) -> f64 {
    p_r.distance(p_i) - (r_r + r_i + margins.d_safety(label))
}

/// Expected social cost under cooperation probability `coop_prob`.
pub fn social_cost(p_r: DVec2, p_i: DVec2, coop_prob: f64, weights: &MpcWeights) -> f64 {
    let d2 = p_r.distance_squared(p_i);
    let sc = weights.sigma_coop * weights.sigma_coop;
    let sn = weights.sigma_noncoop * weights.sigma_noncoop;
    weights.eta * (coop_prob * (-d2 / sc).exp() + (1.0 - coop_prob) * (-d2 / sn).exp())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn projection() {
        let p = DVec2::new(1.0, 2.0);
        assert!(project_pedestrians(p, DVec2::ZERO, 3, 0.25).iter().all(|&q| q == p));
        let proj = project_pedestrians(DVec2::ZERO, DVec2::new(1.0, 0.0), 4, 0.25);
        assert_eq!(proj[3], DVec2::new(1.0, 0.0));
        assert_eq!(project_pedestrians(p, DVec2::X, 1, 0.25).len(), 1);
    }

    #[test]
    fn barrier_values() {
        let m = SafetyMargins {
            d0: 0.1,
            d_coop: 0.1,
            d_noncoop: 0.4,
            gamma: 0.3,
        };
        let a = DVec2::ZERO;
        let b = DVec2::new(2.0, 0.0);
        assert!((barrier_value(a, b, 0.3, 0.3, 1, &m) - 1.2).abs() < 1e-12);
        assert!((barrier_value(a, b, 0.3, 0.3, 0, &m) - 0.9).abs() < 1e-12);
        assert!((barrier_value(a, a, 0.3, 0.3, 0, &m) + 1.1).abs() < 1e-12);
    }

    #[test]
    fn social_costs() {
        let w = MpcWeights::default();
        let at = |d: f64, p: f64| social_cost(DVec2::ZERO, DVec2::new(d, 0.0), p, &w);
        assert!((at(w.sigma_coop, 1.0) - w.eta * (-1.0f64).exp()).abs() < 1e-12);
        assert!((at(0.0, 0.5) - w.eta).abs() < 1e-12);
        // 0.25·e^(−1/0.36) + 0.75·e^(−1/1.44), evaluated by hand.
        let expected = 0.25 * 0.062_176_524_022_116_32 + 0.75 * 0.499_351_788_599_276_2;
        assert!((at(1.0, 0.25) - expected).abs() < 1e-12, "{}", at(1.0, 0.25));
    }

    #[test]
    fn flipping_label_never_raises_barrier() {
        let m = SafetyMargins::default();
        for k in 0..50 {
            let p = DVec2::new(k as f64 * 0.1, 0.3);
            let coop = barrier_value(DVec2::ZERO, p, 0.3, 0.3, 1, &m);
            let non = barrier_value(DVec2::ZERO, p, 0.3, 0.3, 0, &m);
            assert!(non <= coop);
        }
    }

    #[test]
    fn default_settings_valid() {
        MpcSettings::default().validate().unwrap();
    }
}
