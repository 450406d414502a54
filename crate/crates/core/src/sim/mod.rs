//! Ground-truth 2D crowd simulation.

mod orca;
mod social_force;
mod world;

use glam::DVec2;
use serde::{Deserialize, Serialize};

use crate::config::{Controller, SimConfig};

pub use orca::{orca_velocity, orca_velocity_toward, Line};
pub use social_force::{repulsion, social_force_velocity};
pub use world::{detect_collision, spawn_scenario, step_world, CollisionReport, WorldState};

/// Wraps an angle into (−π, π].
pub fn wrap_angle(angle: f64) -> f64 {
    use std::f64::consts::{PI, TAU};
    let r = angle.rem_euclid(TAU);
    if r > PI {
        r - TAU
    } else {
        r
    }
}

/// Ground-truth cooperation attribute.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Behavior {
    /// Reacts to the robot.
    Cooperative,
    /// Ignores the robot.
    NonCooperative,
}

impl Behavior {
    pub fn label(self) -> u8 {
        match self {
            Behavior::Cooperative => 1,
            Behavior::NonCooperative => 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentState {
    pub id: u32,
    pub position: DVec2,
    pub velocity: DVec2,
    pub radius: f64,
    pub goal: DVec2,
    pub pref_speed: f64,
    pub behavior: Behavior,
    pub controller: Controller,
}

impl AgentState {
    /// Velocity straight at the goal at preferred speed, slowing so as not to
    /// overshoot within one step.
    pub fn preferred_velocity(&self, dt: f64) -> DVec2 {
        let to_goal = self.goal - self.position;
        let dist = to_goal.length();
        if dist < 1e-12 {
            return DVec2::ZERO;
        }
        to_goal / dist * self.pref_speed.min(dist / dt)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobotState {
    pub position: DVec2,
    /// Heading in (−π, π].
    pub heading: f64,
    pub velocity: DVec2,
    pub goal: DVec2,
    pub v_ref: f64,
    pub radius: f64,
}

impl RobotState {
    pub fn distance_to_goal(&self) -> f64 {
        self.position.distance(self.goal)
    }

    /// Robot viewed as a disc agent by pedestrians.
    pub fn as_agent(&self) -> AgentState {
        AgentState {
            id: u32::MAX,
            position: self.position,
            velocity: self.velocity,
            radius: self.radius,
            goal: self.goal,
            pref_speed: self.v_ref,
            behavior: Behavior::NonCooperative,
            controller: Controller::Orca,
        }
    }
}

/// Unicycle command.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Control {
    /// Forward speed (m/s).
    pub v: f64,
    /// Yaw rate (rad/s).
    pub w: f64,
}

impl Control {
    pub const ZERO: Control = Control { v: 0.0, w: 0.0 };

    pub fn new(v: f64, w: f64) -> Self {
        Self { v, w }
    }

    pub fn clamped(self, cfg: &SimConfig) -> Self {
        Self {
            v: self.v.clamp(cfg.v_min, cfg.v_max),
            w: self.w.clamp(-cfg.w_max, cfg.w_max),
        }
    }
}

/// Integrates unicycle kinematics over one step (explicit Euler, heading
/// updated after the translation).
pub fn unicycle_step(state: &RobotState, u: Control, dt: f64) -> RobotState {
    let dir = DVec2::new(state.heading.cos(), state.heading.sin());
    RobotState {
        position: state.position + dir * (u.v * dt),
        heading: wrap_angle(state.heading + u.w * dt),
        velocity: dir * u.v,
        ..state.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn robot(heading: f64) -> RobotState {
        RobotState {
            position: DVec2::ZERO,
            heading,
            velocity: DVec2::ZERO,
            goal: DVec2::new(10.0, 0.0),
            v_ref: 1.0,
            radius: 0.3,
        }
    }

    // Independent wrap: repeated ±2π shifts.
    fn wrap_oracle(mut a: f64) -> f64 {
        while a > PI {
            a -= 2.0 * PI;
        }
        while a <= -PI {
            a += 2.0 * PI;
        }
        a
    }

    #[test]
    fn straight_line() {
        let next = unicycle_step(&robot(0.0), Control::new(1.0, 0.0), 0.25);
        assert_eq!(next.position, DVec2::new(0.25, 0.0));
        assert_eq!(next.heading, 0.0);
        assert_eq!(next.velocity, DVec2::new(1.0, 0.0));
    }

    #[test]
    fn pure_rotation() {
        let next = unicycle_step(&robot(0.3), Control::new(0.0, 1.0), 0.25);
        assert_eq!(next.position, DVec2::ZERO);
        assert!((next.heading - 0.55).abs() < 1e-15);
    }

    #[test]
    fn heading_wraps() {
        let next = unicycle_step(&robot(PI - 0.1), Control::new(0.0, 1.0), 0.25);
        let expected = wrap_oracle(PI - 0.1 + 0.25);
        assert!((next.heading - expected).abs() < 1e-12);
        assert!(next.heading > -PI && next.heading <= PI);
        assert!((next.heading - (-PI + 0.15)).abs() < 1e-12);
    }

    #[test]
    fn wrap_matches_oracle() {
        for i in -400..400 {
            let a = i as f64 * 0.0731;
            assert!((wrap_angle(a) - wrap_oracle(a)).abs() < 1e-12, "{a}");
        }
        assert_eq!(wrap_angle(PI), PI);
        assert_eq!(wrap_angle(-PI), PI);
    }
}
