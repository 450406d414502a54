use glam::DVec2;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{orca_velocity_toward, social_force_velocity, unicycle_step, wrap_angle, AgentState, Behavior, Control, RobotState};
use crate::config::{Controller, SimConfig};
use crate::error::{Error, Result};
use crate::rng::{self, Stream};

const SPAWN_CLEARANCE: f64 = 0.2;
const SPAWN_JITTER: f64 = 0.5;
const MAX_SPAWN_ATTEMPTS: usize = 10_000;
const GOAL_REACHED: f64 = 0.3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldState {
    pub robot: RobotState,
    pub pedestrians: Vec<AgentState>,
    pub time: f64,
    pub step_index: u64,
    pub rng_seed: u64,
}

impl WorldState {
    pub fn pedestrian(&self, id: u32) -> Option<&AgentState> {
        self.pedestrians.iter().find(|p| p.id == id)
    }
}

fn jitter(rng: &mut rng::Rng) -> DVec2 {
    let r = SPAWN_JITTER * rng.gen::<f64>().sqrt();
    let a = rng.gen_range(0.0..std::f64::consts::TAU);
    DVec2::new(r * a.cos(), r * a.sin())
}

fn on_circle(radius: f64, angle: f64) -> DVec2 {
    DVec2::new(radius * angle.cos(), radius * angle.sin())
}

/// Circle-crossing scenario. The robot starts on the spawn circle facing its
/// antipodal goal; pedestrians start on the circle with goals near their
/// antipodes, both jittered within a 0.5 m disc. Agents never overlap at
/// spawn (clearance 0.2 m beyond the radii). Pedestrian ids `0..n_cooperative`
/// are cooperative, the rest non-cooperative.
pub fn spawn_scenario(config: &SimConfig, seed: u64) -> Result<WorldState> {
    config.validate()?;
    let mut rng = rng::stream(seed, Stream::Spawn);
    let radius = config.arena_spawn_radius;

    let robot_angle = rng.gen_range(0.0..std::f64::consts::TAU);
    let start = on_circle(radius, robot_angle);
    let goal = -start;
    let robot = RobotState {
        position: start,
        heading: wrap_angle((goal - start).to_angle()),
        velocity: DVec2::ZERO,
        goal,
        v_ref: config.v_ref,
        radius: config.robot_radius,
    };

    let n = config.n_pedestrians();
    let mut pedestrians: Vec<AgentState> = Vec::with_capacity(n);
    let mut attempts = 0;
    for id in 0..n {
        let behavior = if id < config.n_cooperative {
            Behavior::Cooperative
        } else {
            Behavior::NonCooperative
        };
        loop {
            if attempts >= MAX_SPAWN_ATTEMPTS {
                return Err(Error::ScenarioGeneration {
                    attempts,
                    placed: pedestrians.len(),
                    requested: n,
                });
            }
            attempts += 1;
            let angle = rng.gen_range(0.0..std::f64::consts::TAU);
            let position = on_circle(radius, angle) + jitter(&mut rng);
            let ped_goal = -on_circle(radius, angle) + jitter(&mut rng);
            let clear_of_robot =
                position.distance(robot.position) >= config.ped_radius + robot.radius + SPAWN_CLEARANCE;
            let clear_of_peds = pedestrians
                .iter()
                .all(|p| position.distance(p.position) >= config.ped_radius + p.radius + SPAWN_CLEARANCE);
            if clear_of_robot && clear_of_peds {
                pedestrians.push(AgentState {
                    id: id as u32,
                    position,
                    velocity: DVec2::ZERO,
                    radius: config.ped_radius,
                    goal: ped_goal,
                    pref_speed: config.ped_pref_speed,
                    behavior,
                    controller: config.ped_controller,
                });
                break;
            }
        }
    }

    Ok(WorldState {
        robot,
        pedestrians,
        time: 0.0,
        step_index: 0,
        rng_seed: seed,
    })
}

/// Agents pedestrian `agent` reacts to: other pedestrians within the
/// neighbour distance, plus the robot when cooperative, nearest first
/// (ties broken by id), at most `max_neighbors`.
fn neighbors_of<'a>(
    agent: &AgentState,
    world: &'a WorldState,
    robot: &'a AgentState,
    config: &SimConfig,
) -> Vec<&'a AgentState> {
    let range_sq = config.orca_params.neighbor_dist * config.orca_params.neighbor_dist;
    let mut found: Vec<(f64, u32, &AgentState)> = world
        .pedestrians
        .iter()
        .filter(|o| o.id != agent.id)
        .map(|o| (o.position.distance_squared(agent.position), o.id, o))
        .filter(|(d, _, _)| *d < range_sq)
        .collect();
    if agent.behavior == Behavior::Cooperative {
        let d = robot.position.distance_squared(agent.position);
        if d < range_sq {
            found.push((d, robot.id, robot));
        }
    }
    found.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    found.truncate(config.orca_params.max_neighbors);
    found.into_iter().map(|(_, _, a)| a).collect()
}

/// Rotates `new` toward `old` so its direction changes by at most `max_turn`.
fn limit_turn(old: DVec2, new: DVec2, max_turn: f64) -> DVec2 {
    if old.length_squared() < 1e-12 || new.length_squared() < 1e-12 {
        return new;
    }
    let delta = wrap_angle(new.to_angle() - old.to_angle());
    if delta.abs() <= max_turn {
        return new;
    }
    let heading = old.to_angle() + max_turn.copysign(delta);
    DVec2::new(heading.cos(), heading.sin()) * new.length()
}

fn pedestrian_velocity(agent: &AgentState, world: &WorldState, robot: &AgentState, config: &SimConfig) -> DVec2 {
    let neighbors = neighbors_of(agent, world, robot, config);
    let max_turn = config.w_max * config.dt;
    let v = match agent.controller {
        // The turn cap acts on the preferred velocity so that the ORCA
        // solution itself stays collision-free.
        Controller::Orca => {
            let mut pref = agent.preferred_velocity(config.dt);
            if config.ped_turn_limit {
                pref = limit_turn(agent.velocity, pref, max_turn);
            }
            orca_velocity_toward(agent, pref, &neighbors, &config.orca_params, config.dt)
        }
        Controller::SocialForce => {
            let raw = social_force_velocity(
                agent,
                &neighbors,
                &config.sf_params,
                config.dt,
                rng::mix(world.rng_seed, world.step_index),
            );
            if config.ped_turn_limit {
                limit_turn(agent.velocity, raw, max_turn)
            } else {
                raw
            }
        }
    };
    let speed = v.length();
    if speed > agent.pref_speed {
        v * (agent.pref_speed / speed)
    } else {
        v
    }
}

/// Advances the world by one step. Pedestrian velocities are all computed
/// from the pre-step snapshot before anyone moves.
pub fn step_world(world: &WorldState, robot_control: Control, config: &SimConfig) -> WorldState {
    let robot_agent = world.robot.as_agent();
    let velocities: Vec<DVec2> = world
        .pedestrians
        .iter()
        .map(|p| pedestrian_velocity(p, world, &robot_agent, config))
        .collect();

    let step_index = world.step_index + 1;
    let pedestrians = world
        .pedestrians
        .iter()
        .zip(velocities)
        .map(|(p, v)| {
            let position = p.position + v * config.dt;
            let mut goal = p.goal;
            if config.recycle_goals && position.distance(goal) < GOAL_REACHED {
                let mut g = rng::substream(rng::mix(world.rng_seed, step_index), p.id as u64, Stream::Goals);
                goal = on_circle(config.arena_spawn_radius, g.gen_range(0.0..std::f64::consts::TAU));
            }
            AgentState {
                position,
                velocity: v,
                goal,
                ..p.clone()
            }
        })
        .collect();

    WorldState {
        robot: unicycle_step(&world.robot, robot_control.clamped(config), config.dt),
        pedestrians,
        time: step_index as f64 * config.dt,
        step_index,
        rng_seed: world.rng_seed,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CollisionReport {
    pub ped_id: u32,
    pub penetration_depth: f64,
}

/// Deepest robot–pedestrian overlap, lowest id on ties.
pub fn detect_collision(world: &WorldState) -> Option<CollisionReport> {
    let robot = &world.robot;
    let mut worst: Option<CollisionReport> = None;
    for p in &world.pedestrians {
        let depth = robot.radius + p.radius - robot.position.distance(p.position);
        if depth <= 0.0 {
            continue;
        }
        let better = match worst {
            None => true,
            Some(w) => depth > w.penetration_depth || (depth == w.penetration_depth && p.id < w.ped_id),
        };
        if better {
            worst = Some(CollisionReport {
                ped_id: p.id,
                penetration_depth: depth,
            });
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Scenario;

    fn empty_config() -> SimConfig {
        SimConfig {
            n_cooperative: 0,
            n_noncooperative: 0,
            ..SimConfig::default()
        }
    }

    fn bare_world(robot_pos: DVec2, peds: Vec<AgentState>) -> WorldState {
        WorldState {
            robot: RobotState {
                position: robot_pos,
                heading: 0.0,
                velocity: DVec2::ZERO,
                goal: DVec2::new(10.0, 0.0),
                v_ref: 1.0,
                radius: 0.3,
            },
            pedestrians: peds,
            time: 0.0,
            step_index: 0,
            rng_seed: 1,
        }
    }

    fn ped(id: u32, pos: DVec2, goal: DVec2, behavior: Behavior) -> AgentState {
        AgentState {
            id,
            position: pos,
            velocity: DVec2::ZERO,
            radius: 0.3,
            goal,
            pref_speed: 1.0,
            behavior,
            controller: Controller::Orca,
        }
    }

    #[test]
    fn empty_crowd_spawn() {
        let w = spawn_scenario(&empty_config(), 7).unwrap();
        assert!(w.pedestrians.is_empty());
        assert!((w.robot.distance_to_goal() - 12.0).abs() < 1e-12);
    }

    #[test]
    fn mid_composition() {
        let w = spawn_scenario(&SimConfig::for_scenario(Scenario::Mid), 3).unwrap();
        let coop = w.pedestrians.iter().filter(|p| p.behavior == Behavior::Cooperative).count();
        assert_eq!(coop, 5);
        assert_eq!(w.pedestrians.len() - coop, 15);
    }

    #[test]
    fn spawn_is_deterministic_and_clear() {
        let cfg = SimConfig::for_scenario(Scenario::High);
        for seed in 0..20 {
            let a = spawn_scenario(&cfg, seed).unwrap();
            let b = spawn_scenario(&cfg, seed).unwrap();
            assert_eq!(a, b);
            let mut ids: Vec<u32> = a.pedestrians.iter().map(|p| p.id).collect();
            ids.dedup();
            assert_eq!(ids.len(), a.pedestrians.len());
            for (i, p) in a.pedestrians.iter().enumerate() {
                assert!(p.position.distance(a.robot.position) >= 0.8 - 1e-12);
                for q in &a.pedestrians[i + 1..] {
                    assert!(p.position.distance(q.position) >= 0.8 - 1e-12);
                    assert!((p.goal + p.position).length() <= 1.0 + 1e-12);
                }
            }
        }
    }

    #[test]
    fn overcrowded_spawn_fails() {
        let cfg = SimConfig {
            arena_spawn_radius: 1.0,
            n_cooperative: 0,
            n_noncooperative: 40,
            ..SimConfig::default()
        };
        assert!(matches!(spawn_scenario(&cfg, 1), Err(Error::ScenarioGeneration { .. })));
    }

    #[test]
    fn robot_only_world_advances() {
        let cfg = empty_config();
        let w = spawn_scenario(&cfg, 7).unwrap();
        let next = step_world(&w, Control::new(1.0, 0.0), &cfg);
        assert!((w.robot.distance_to_goal() - next.robot.distance_to_goal() - 0.25).abs() < 1e-12);
        assert_eq!(next.step_index, 1);
        assert_eq!(next.time, 0.25);
        assert!(next.pedestrians.is_empty());
    }

    #[test]
    fn simultaneous_update_uses_old_positions() {
        let cfg = SimConfig::default();
        let a = ped(0, DVec2::new(0.0, 0.0), DVec2::new(5.0, 0.0), Behavior::NonCooperative);
        let b = ped(1, DVec2::new(1.2, 0.0), DVec2::new(-5.0, 0.0), Behavior::NonCooperative);
        let world = bare_world(DVec2::new(0.0, -20.0), vec![a.clone(), b.clone()]);
        let next = step_world(&world, Control::ZERO, &cfg);
        let robot = world.robot.as_agent();
        let expected_b = pedestrian_velocity(&b, &world, &robot, &cfg);
        assert_eq!(next.pedestrians[1].velocity, expected_b);
        // Sequential update would have seen A already moved.
        let mut moved = world.clone();
        moved.pedestrians[0] = next.pedestrians[0].clone();
        let sequential_b = pedestrian_velocity(&b, &moved, &robot, &cfg);
        assert_ne!(expected_b, sequential_b);
    }

    #[test]
    fn storage_order_does_not_matter() {
        let cfg = SimConfig::for_scenario(Scenario::Mid);
        let mut world = spawn_scenario(&cfg, 11).unwrap();
        for _ in 0..20 {
            world = step_world(&world, Control::new(0.8, 0.1), &cfg);
        }
        let mut permuted = world.clone();
        permuted.pedestrians.reverse();
        let a = step_world(&world, Control::new(0.5, -0.2), &cfg);
        let b = step_world(&permuted, Control::new(0.5, -0.2), &cfg);
        for p in &a.pedestrians {
            assert_eq!(Some(p), b.pedestrian(p.id));
        }
    }

    #[test]
    fn noncooperative_ignores_robot() {
        let cfg = SimConfig::default();
        let p = ped(0, DVec2::new(0.0, 0.0), DVec2::new(5.0, 0.0), Behavior::NonCooperative);
        let world = bare_world(DVec2::new(0.5, 0.0), vec![p.clone()]);
        let robot = world.robot.as_agent();
        let v = pedestrian_velocity(&p, &world, &robot, &cfg);
        assert_eq!(v, p.preferred_velocity(cfg.dt));

        let coop = AgentState {
            behavior: Behavior::Cooperative,
            ..p
        };
        let world = bare_world(DVec2::new(1.0, 0.0), vec![coop.clone()]);
        let v = pedestrian_velocity(&coop, &world, &robot, &cfg);
        assert_ne!(v, coop.preferred_velocity(cfg.dt));
    }

    #[test]
    fn antipodal_swap_never_collides() {
        let cfg = SimConfig {
            recycle_goals: false,
            ..SimConfig::default()
        };
        for &half in &[2.0, 3.0, 5.0] {
            for &offset in &[0.0, 0.05, 0.3] {
                let a = ped(0, DVec2::new(-half, 0.0), DVec2::new(half, offset), Behavior::Cooperative);
                let b = ped(1, DVec2::new(half, offset), DVec2::new(-half, 0.0), Behavior::Cooperative);
                let mut world = bare_world(DVec2::new(0.0, -50.0), vec![a, b]);
                for _ in 0..200 {
                    world = step_world(&world, Control::ZERO, &cfg);
                    let d = world.pedestrians[0].position.distance(world.pedestrians[1].position);
                    assert!(d >= 0.6 - 1e-9, "collision at separation {d} (half {half}, offset {offset})");
                }
            }
        }
    }

    #[test]
    fn speeds_capped_every_step() {
        let cfg = SimConfig::for_scenario(Scenario::High);
        let mut world = spawn_scenario(&cfg, 5).unwrap();
        for k in 0..120 {
            world = step_world(&world, Control::new(2.0, 3.0 * ((k % 3) as f64 - 1.0)), &cfg);
            assert!(world.robot.velocity.length() <= cfg.v_max + 1e-12);
            for p in &world.pedestrians {
                assert!(p.velocity.length() <= p.pref_speed + 1e-9);
            }
            assert_eq!(world.time, world.step_index as f64 * cfg.dt);
        }
    }

    #[test]
    fn collision_reports() {
        let none = bare_world(DVec2::ZERO, vec![ped(0, DVec2::new(1.0, 0.0), DVec2::ZERO, Behavior::Cooperative)]);
        assert_eq!(detect_collision(&none), None);

        let hit = bare_world(DVec2::ZERO, vec![ped(3, DVec2::new(0.5, 0.0), DVec2::ZERO, Behavior::Cooperative)]);
        let r = detect_collision(&hit).unwrap();
        assert_eq!(r.ped_id, 3);
        assert!((r.penetration_depth - 0.1).abs() < 1e-12);

        let tie = bare_world(
            DVec2::ZERO,
            vec![
                ped(7, DVec2::new(0.5, 0.0), DVec2::ZERO, Behavior::Cooperative),
                ped(2, DVec2::new(-0.5, 0.0), DVec2::ZERO, Behavior::Cooperative),
            ],
        );
        assert_eq!(detect_collision(&tie).unwrap().ped_id, 2);
    }
}
