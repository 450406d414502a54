//! Helbing–Molnár social force, integrated as a velocity update.

use glam::DVec2;
use rand::Rng as _;

use super::AgentState;
use crate::config::SocialForceParams;
use crate::rng::{self, Stream};

/// Repulsive force exerted on `agent` by `other`:
/// `A·exp((r_i + r_j − d)/B)` pointing away from `other`.
///
/// Coincident centres have no defined direction; one is drawn from
/// `degenerate_seed` so the result stays deterministic.
pub fn repulsion(agent: &AgentState, other: &AgentState, params: &SocialForceParams, degenerate_seed: u64) -> DVec2 {
    let offset = agent.position - other.position;
    let d = offset.length();
    let magnitude = params.a * ((agent.radius + other.radius - d) / params.b).exp();
    let away = if d > 1e-12 {
        offset / d
    } else {
        let pair = ((agent.id as u64) << 32) | other.id as u64;
        let angle = rng::substream(degenerate_seed, pair, Stream::Degenerate).gen_range(0.0..std::f64::consts::TAU);
        DVec2::new(angle.cos(), angle.sin())
    };
    away * magnitude
}

/// One social-force velocity update with unit mass, capped at the agent's
/// preferred speed.
pub fn social_force_velocity(
    agent: &AgentState,
    neighbors: &[&AgentState],
    params: &SocialForceParams,
    dt: f64,
    degenerate_seed: u64,
) -> DVec2 {
    let goal_force = (agent.preferred_velocity(dt) - agent.velocity) / params.relaxation_time;
    let repulsive: DVec2 = neighbors
        .iter()
        .map(|n| repulsion(agent, n, params, degenerate_seed))
        .sum();
    let v = agent.velocity + (goal_force + repulsive) * dt;
    let speed = v.length();
    if speed > agent.pref_speed {
        v * (agent.pref_speed / speed)
    } else {
        v
    }
}
