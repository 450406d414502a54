//! Optimal reciprocal collision avoidance for disc agents.
//!
//! Half-plane construction and the incremental 2D / 3D linear programs follow
//! the RVO2 library (van den Berg et al.), restricted to agent neighbours.

use glam::DVec2;

use super::AgentState;
use crate::config::OrcaParams;

const EPSILON: f64 = 1e-9;

/// Directed line bounding the permitted velocity half-plane, which lies to
/// the left of `direction`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Line {
    pub point: DVec2,
    pub direction: DVec2,
}

#[inline]
fn det(a: DVec2, b: DVec2) -> f64 {
    a.perp_dot(b)
}

/// ORCA velocity for `agent` given `neighbors` (already filtered by the
/// caller to the agents it reacts to). Returns the velocity closest to the
/// preferred velocity satisfying every reciprocal half-plane, or the least
/// violating one when the constraints are jointly infeasible.
pub fn orca_velocity(agent: &AgentState, neighbors: &[&AgentState], params: &OrcaParams, dt: f64) -> DVec2 {
    orca_velocity_toward(agent, agent.preferred_velocity(dt), neighbors, params, dt)
}

/// [`orca_velocity`] with an explicit preferred velocity.
pub fn orca_velocity_toward(
    agent: &AgentState,
    pref: DVec2,
    neighbors: &[&AgentState],
    params: &OrcaParams,
    dt: f64,
) -> DVec2 {
    let lines: Vec<Line> = neighbors
        .iter()
        .map(|n| half_plane(agent, n, params.time_horizon, dt))
        .collect();
    let max_speed = agent.pref_speed;
    let (fail, mut result) = linear_program2(&lines, max_speed, pref, false);
    if fail < lines.len() {
        result = linear_program3(&lines, fail, max_speed, result);
    }
    result
}

/// Reciprocal half-plane induced on `agent` by `other`.
pub(crate) fn half_plane(agent: &AgentState, other: &AgentState, time_horizon: f64, dt: f64) -> Line {
    let rel_pos = other.position - agent.position;
    let rel_vel = agent.velocity - other.velocity;
    let dist_sq = rel_pos.length_squared();
    let combined_radius = agent.radius + other.radius;
    let combined_radius_sq = combined_radius * combined_radius;

    let direction;
    let u;
    if dist_sq > combined_radius_sq {
        let inv_tau = 1.0 / time_horizon;
        let w = rel_vel - rel_pos * inv_tau;
        let w_len_sq = w.length_squared();
        let dot1 = w.dot(rel_pos);
        if dot1 < 0.0 && dot1 * dot1 > combined_radius_sq * w_len_sq {
            // Project on the cut-off circle.
            let w_len = w_len_sq.sqrt();
            let unit_w = w / w_len;
            direction = DVec2::new(unit_w.y, -unit_w.x);
            u = unit_w * (combined_radius * inv_tau - w_len);
        } else {
            // Project on a leg; exact collinearity falls to the right leg.
            let leg = (dist_sq - combined_radius_sq).sqrt();
            direction = if det(rel_pos, w) > 0.0 {
                DVec2::new(
                    rel_pos.x * leg - rel_pos.y * combined_radius,
                    rel_pos.x * combined_radius + rel_pos.y * leg,
                ) / dist_sq
            } else {
                -DVec2::new(
                    rel_pos.x * leg + rel_pos.y * combined_radius,
                    -rel_pos.x * combined_radius + rel_pos.y * leg,
                ) / dist_sq
            };
            u = direction * rel_vel.dot(direction) - rel_vel;
        }
    } else {
        // Already overlapping: resolve within one step.
        let inv_dt = 1.0 / dt;
        let w = rel_vel - rel_pos * inv_dt;
        let w_len = w.length();
        let unit_w = if w_len > EPSILON { w / w_len } else { DVec2::new(1.0, 0.0) };
        direction = DVec2::new(unit_w.y, -unit_w.x);
        u = unit_w * (combined_radius * inv_dt - w_len);
    }
    Line {
        point: agent.velocity + u * 0.5,
        direction,
    }
}

/// Optimizes along line `line_no` subject to the lines before it and the
/// speed disc.
fn linear_program1(lines: &[Line], line_no: usize, radius: f64, opt: DVec2, direction_opt: bool) -> Option<DVec2> {
    let line = lines[line_no];
    let dot = line.point.dot(line.direction);
    let discriminant = dot * dot + radius * radius - line.point.length_squared();
    if discriminant < 0.0 {
        return None;
    }
    let sqrt_disc = discriminant.sqrt();
    let mut t_left = -dot - sqrt_disc;
    let mut t_right = -dot + sqrt_disc;

    for other in &lines[..line_no] {
        let denominator = det(line.direction, other.direction);
        let numerator = det(other.direction, line.point - other.point);
        if denominator.abs() <= EPSILON {
            if numerator < 0.0 {
                return None;
            }
            continue;
        }
        let t = numerator / denominator;
        if denominator >= 0.0 {
            t_right = t_right.min(t);
        } else {
            t_left = t_left.max(t);
        }
        if t_left > t_right {
            return None;
        }
    }

    let t = if direction_opt {
        if opt.dot(line.direction) > 0.0 {
            t_right
        } else {
            t_left
        }
    } else {
        line.direction.dot(opt - line.point).clamp(t_left, t_right)
    };
    Some(line.point + line.direction * t)
}

/// Returns the index of the first line that could not be satisfied (or
/// `lines.len()`) and the current optimum.
fn linear_program2(lines: &[Line], radius: f64, opt: DVec2, direction_opt: bool) -> (usize, DVec2) {
    let mut result = if direction_opt {
        opt * radius
    } else if opt.length_squared() > radius * radius {
        opt.normalize() * radius
    } else {
        opt
    };
    for (i, line) in lines.iter().enumerate() {
        if det(line.direction, line.point - result) > 0.0 {
            match linear_program1(lines, i, radius, opt, direction_opt) {
                Some(r) => result = r,
                None => return (i, result),
            }
        }
    }
    (lines.len(), result)
}

/// Minimizes the maximum half-plane violation (the "safest" velocity) when
/// the constraint set is empty.
fn linear_program3(lines: &[Line], begin: usize, radius: f64, mut result: DVec2) -> DVec2 {
    let mut distance = 0.0;
    for i in begin..lines.len() {
        if det(lines[i].direction, lines[i].point - result) > distance {
            let mut projected = Vec::with_capacity(i);
            for j in 0..i {
                let determinant = det(lines[i].direction, lines[j].direction);
                let point = if determinant.abs() <= EPSILON {
                    if lines[i].direction.dot(lines[j].direction) > 0.0 {
                        continue;
                    }
                    (lines[i].point + lines[j].point) * 0.5
                } else {
                    lines[i].point
                        + lines[i].direction
                            * (det(lines[j].direction, lines[i].point - lines[j].point) / determinant)
                };
                projected.push(Line {
                    point,
                    direction: (lines[j].direction - lines[i].direction).normalize(),
                });
            }
            let previous = result;
            let opt = DVec2::new(-lines[i].direction.y, lines[i].direction.x);
            let (fail, r) = linear_program2(&projected, radius, opt, true);
            result = if fail < projected.len() { previous } else { r };
            distance = det(lines[i].direction, lines[i].point - result);
        }
    }
    result
}
