//! Simulation and planner configuration.
//!
//! Configuration files are TOML. Every section and key is optional; missing
//! values take the defaults below.
//!
//! ```toml
//! [sim]
//! dt = 0.25
//! arena_spawn_radius = 6.0
//! n_cooperative = 5
//! n_noncooperative = 15
//! sensing_range = 5.0
//!
//! [sim.orca]
//! neighbor_dist = 5.0
//! time_horizon = 2.0
//! max_neighbors = 10
//!
//! [sim.social_force]
//! a = 2.0
//! b = 0.35
//! relaxation_time = 0.5
//!
//! [mpc.margins]
//! gamma = 0.3
//! d_noncoop = 0.4
//!
//! [mpc.solver]
//! max_sqp_iterations = 5
//!
//! [reward]
//! lambda_h = 0.01
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mpc::MpcSettings;
use crate::policy::reward::RewardCoeffs;

/// Pedestrian motion model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Controller {
    Orca,
    SocialForce,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OrcaParams {
    pub neighbor_dist: f64,
    pub time_horizon: f64,
    pub max_neighbors: usize,
}

impl Default for OrcaParams {
    fn default() -> Self {
        Self {
            neighbor_dist: 5.0,
            time_horizon: 2.0,
            max_neighbors: 10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SocialForceParams {
    /// Repulsion strength (m/s²).
    pub a: f64,
    /// Repulsion range (m).
    pub b: f64,
    pub relaxation_time: f64,
}

impl Default for SocialForceParams {
    fn default() -> Self {
        Self {
            a: 2.0,
            b: 0.35,
            relaxation_time: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub dt: f64,
    pub arena_spawn_radius: f64,
    pub n_cooperative: usize,
    pub n_noncooperative: usize,
    pub robot_radius: f64,
    pub ped_radius: f64,
    pub v_min: f64,
    pub v_max: f64,
    pub w_max: f64,
    pub v_ref: f64,
    pub ped_pref_speed: f64,
    pub timeout: f64,
    pub sensing_range: f64,
    pub ped_controller: Controller,
    /// Re-assign a fresh goal when a pedestrian arrives at its current one.
    pub recycle_goals: bool,
    /// Cap pedestrian heading change to `w_max * dt` per step.
    pub ped_turn_limit: bool,
    #[serde(rename = "orca")]
    pub orca_params: OrcaParams,
    #[serde(rename = "social_force")]
    pub sf_params: SocialForceParams,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            dt: 0.25,
            arena_spawn_radius: 6.0,
            n_cooperative: 5,
            n_noncooperative: 15,
            robot_radius: 0.3,
            ped_radius: 0.3,
            v_min: -0.5,
            v_max: 1.0,
            w_max: 1.0,
            v_ref: 1.0,
            ped_pref_speed: 1.0,
            timeout: 30.0,
            sensing_range: 5.0,
            ped_controller: Controller::Orca,
            recycle_goals: true,
            ped_turn_limit: true,
            orca_params: OrcaParams::default(),
            sf_params: SocialForceParams::default(),
        }
    }
}

/// Crowd compositions (cooperative / non-cooperative counts).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    Low,
    Mid,
    High,
}

impl Scenario {
    pub const ALL: [Scenario; 3] = [Scenario::Low, Scenario::Mid, Scenario::High];

    /// (cooperative, non-cooperative) pedestrian counts.
    pub fn composition(self) -> (usize, usize) {
        match self {
            Scenario::Low => (0, 20),
            Scenario::Mid => (5, 15),
            Scenario::High => (10, 10),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Scenario::Low => "low",
            Scenario::Mid => "mid",
            Scenario::High => "high",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "low" => Some(Scenario::Low),
            "mid" => Some(Scenario::Mid),
            "high" => Some(Scenario::High),
            _ => None,
        }
    }

    pub fn apply(self, base: &SimConfig) -> SimConfig {
        let (coop, noncoop) = self.composition();
        SimConfig {
            n_cooperative: coop,
            n_noncooperative: noncoop,
            ..base.clone()
        }
    }
}

impl SimConfig {
    pub fn for_scenario(scenario: Scenario) -> Self {
        scenario.apply(&SimConfig::default())
    }

    pub fn n_pedestrians(&self) -> usize {
        self.n_cooperative + self.n_noncooperative
    }

    /// Number of whole steps before the episode times out.
    pub fn max_steps(&self) -> u64 {
        (self.timeout / self.dt).round() as u64
    }

    /// Checks the invariants. A crowd may be empty here; scenario presets
    /// always have pedestrians.
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("dt", self.dt),
            ("arena_spawn_radius", self.arena_spawn_radius),
            ("robot_radius", self.robot_radius),
            ("ped_radius", self.ped_radius),
            ("v_max", self.v_max),
            ("w_max", self.w_max),
            ("v_ref", self.v_ref),
            ("ped_pref_speed", self.ped_pref_speed),
            ("sensing_range", self.sensing_range),
            ("orca.time_horizon", self.orca_params.time_horizon),
            ("social_force.b", self.sf_params.b),
            ("social_force.relaxation_time", self.sf_params.relaxation_time),
        ];
        for (name, value) in positive {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::Config(format!("{name} must be positive, got {value}")));
            }
        }
        if self.timeout <= self.dt {
            return Err(Error::Config(format!(
                "timeout ({}) must exceed dt ({})",
                self.timeout, self.dt
            )));
        }
        if self.v_min > self.v_max {
            return Err(Error::Config("v_min exceeds v_max".into()));
        }
        Ok(())
    }

    /// Like [`validate`](Self::validate) but also requires a non-empty crowd.
    pub fn validate_crowd(&self) -> Result<()> {
        self.validate()?;
        if self.n_pedestrians() == 0 {
            return Err(Error::Config("n_cooperative + n_noncooperative must be > 0".into()));
        }
        Ok(())
    }
}

/// Everything a config file may set.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConfigFile {
    pub sim: SimConfig,
    pub mpc: MpcSettings,
    pub reward: RewardCoeffs,
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let cfg: ConfigFile = toml::from_str(text)?;
        cfg.sim.validate()?;
        cfg.mpc.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        SimConfig::default().validate_crowd().unwrap();
        assert_eq!(SimConfig::default().max_steps(), 120);
    }

    #[test]
    fn preset_compositions() {
        assert_eq!(Scenario::Low.composition(), (0, 20));
        assert_eq!(Scenario::Mid.composition(), (5, 15));
        assert_eq!(Scenario::High.composition(), (10, 10));
    }

    #[test]
    fn partial_file_keeps_defaults() {
        let cfg = ConfigFile::parse(
            "[sim]\nn_cooperative = 2\nn_noncooperative = 3\n[sim.orca]\ntime_horizon = 3.0\n",
        )
        .unwrap();
        assert_eq!(cfg.sim.n_cooperative, 2);
        assert_eq!(cfg.sim.orca_params.time_horizon, 3.0);
        assert_eq!(cfg.sim.orca_params.neighbor_dist, 5.0);
        assert_eq!(cfg.sim.dt, 0.25);
    }

    #[test]
    fn rejects_bad_values() {
        assert!(ConfigFile::parse("[sim]\ndt = -1.0\n").is_err());
        assert!(ConfigFile::parse("[sim]\ntimeout = 0.1\n").is_err());
        assert!(ConfigFile::parse("[sim]\nbogus = 1\n").is_err());
        let empty = SimConfig {
            n_cooperative: 0,
            n_noncooperative: 0,
            ..SimConfig::default()
        };
        assert!(empty.validate_crowd().is_err());
    }
}
