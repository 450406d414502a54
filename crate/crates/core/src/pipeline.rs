//! The per-step navigation loop shared by evaluation and policy training:
//! sense, classify cooperation, build the observation graph, plan with the
//! chosen horizon, act.

use std::sync::Arc;

use glam::DVec2;

use crate::config::SimConfig;
use crate::coop::{infer_cooperation, CoopNetParams};
use crate::mpc::{build_mpc, solve_mpc, MpcSettings, MpcSolution, PlannerPedestrian, SolveStatus};
use crate::policy::net::PolicyInput;
use crate::policy::reward::{compute_reward, RewardBreakdown, RewardCoeffs, StepOutcome};
use crate::sensing::{build_graph, observe, to_robot_frame, to_world_frame, PedestrianObservation, SpatioTemporalGraph, TrajectoryHistory, HISTORY_LEN};
use crate::sim::{detect_collision, step_world, Control, WorldState};

/// Distance to the goal at which an episode succeeds.
pub const SUCCESS_RADIUS: f64 = 0.3;

/// Source of the cooperation estimates fed to the planner and reward.
#[derive(Debug, Clone)]
pub enum CoopMode {
    Learned(Arc<CoopNetParams>),
    /// Every pedestrian treated as non-cooperative (c = 0, P = 0).
    Disabled,
}

/// What the robot perceives at one step.
#[derive(Debug, Clone)]
pub struct Perception {
    pub visible: Vec<u32>,
    pub observations: Vec<PedestrianObservation>,
    pub graph: SpatioTemporalGraph,
    pub input: PolicyInput,
}

impl Perception {
    pub fn labels(&self) -> Vec<u8> {
        self.graph.labels()
    }

    pub fn coop_probs(&self) -> Vec<f64> {
        self.observations.iter().map(|o| o.coop_prob).collect()
    }
}

/// Result of acting once.
#[derive(Debug, Clone)]
pub struct StepResult {
    pub world: WorldState,
    pub control: Control,
    pub solution: MpcSolution,
    pub outcome: StepOutcome,
    pub reward: RewardBreakdown,
}

impl StepResult {
    pub fn degraded(&self) -> bool {
        self.solution.status == SolveStatus::Degraded
    }
}

/// Terminal classification of a post-step world. A collision takes
/// precedence over reaching the goal in the same step.
pub fn classify_outcome(world: &WorldState, config: &SimConfig) -> StepOutcome {
    if detect_collision(world).is_some() {
        StepOutcome::Collision
    } else if world.robot.distance_to_goal() < SUCCESS_RADIUS {
        StepOutcome::Goal
    } else if world.step_index >= config.max_steps() {
        StepOutcome::Timeout
    } else {
        StepOutcome::Running
    }
}

/// Planner view of the perceived pedestrians, in world coordinates.
pub fn planner_pedestrians(world: &WorldState, obs: &[PedestrianObservation], ped_radius: f64) -> Vec<PlannerPedestrian> {
    let robot = &world.robot;
    obs.iter()
        .map(|o| PlannerPedestrian {
            id: o.ped_id,
            position: to_world_frame(robot.position, robot.heading, o.rel_position),
            velocity: DVec2::from_angle(robot.heading).rotate(o.rel_velocity) + robot.velocity,
            radius: ped_radius,
            coop_prob: o.coop_prob,
            label: o.coop_label,
        })
        .collect()
}

/// Stateful robot-side stack: tracking history and the MPC warm start
/// persist across the steps of one episode.
#[derive(Debug, Clone)]
pub struct Navigator {
    pub config: SimConfig,
    pub mpc: MpcSettings,
    pub coeffs: RewardCoeffs,
    pub coop: CoopMode,
    history: TrajectoryHistory,
    warm_start: Option<MpcSolution>,
}

impl Navigator {
    pub fn new(config: SimConfig, mpc: MpcSettings, coeffs: RewardCoeffs, coop: CoopMode) -> Self {
        Self {
            config,
            mpc,
            coeffs,
            coop,
            history: TrajectoryHistory::new(HISTORY_LEN),
            warm_start: None,
        }
    }

    /// Forgets the previous episode.
    pub fn reset(&mut self) {
        self.history = TrajectoryHistory::new(HISTORY_LEN);
        self.warm_start = None;
    }

    /// Senses the world, updates the track history and labels every visible
    /// pedestrian.
    pub fn perceive(&mut self, world: &WorldState) -> Perception {
        let visible = observe(world, &self.config);
        self.history.update(world, &visible);
        let mut observations = to_robot_frame(world, &visible);
        if let CoopMode::Learned(params) = &self.coop {
            let probs = infer_cooperation(params, &self.history, world, &visible);
            for (o, p) in observations.iter_mut().zip(probs) {
                o.set_coop_prob(p);
            }
        }
        let graph = build_graph(&self.history, &world.robot, &observations);
        let input = PolicyInput::from_graph(&graph);
        Perception {
            visible,
            observations,
            graph,
            input,
        }
    }

    /// Solves the MPC at horizon `h`. A degraded solve falls back to the
    /// best sampled sequence the solver returned.
    pub fn plan(&mut self, world: &WorldState, perception: &Perception, h: usize) -> MpcSolution {
        let peds = planner_pedestrians(world, &perception.observations, self.config.ped_radius);
        let problem = build_mpc(&world.robot, &peds, h, &self.mpc, &self.config);
        let solution = solve_mpc(&problem, self.warm_start.as_ref());
        self.warm_start = Some(solution.clone());
        solution
    }

    /// Plans with horizon `h`, applies the first control and scores the
    /// transition.
    pub fn step(&mut self, world: &WorldState, perception: &Perception, h: usize) -> StepResult {
        let solution = self.plan(world, perception, h);
        let control = solution.first_control().clamped(&self.config);
        let next = step_world(world, control, &self.config);
        let outcome = classify_outcome(&next, &self.config);
        let reward = compute_reward(
            world.robot.distance_to_goal(),
            next.robot.distance_to_goal(),
            control,
            h,
            &perception.labels(),
            outcome,
            &self.coeffs,
        );
        StepResult {
            world: next,
            control,
            solution,
            outcome,
            reward,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::spawn_scenario;

    #[test]
    fn empty_arena_reaches_goal() {
        let mut config = SimConfig::default();
        config.n_cooperative = 0;
        config.n_noncooperative = 0;
        let mut nav = Navigator::new(config.clone(), MpcSettings::default(), RewardCoeffs::default(), CoopMode::Disabled);
        let mut world = spawn_scenario(&config, 3).unwrap();
        let mut outcome = StepOutcome::Running;
        while !outcome.is_terminal() {
            let p = nav.perceive(&world);
            let r = nav.step(&world, &p, 5);
            world = r.world;
            outcome = r.outcome;
        }
        assert_eq!(outcome, StepOutcome::Goal);
        // 12 m at 1 m/s, within 20 %
        assert!(world.time <= 14.4, "took {} s", world.time);
    }

    #[test]
    fn planner_positions_round_trip() {
        let config = SimConfig::default();
        let world = spawn_scenario(&config, 1).unwrap();
        let ids: Vec<u32> = world.pedestrians.iter().map(|p| p.id).collect();
        let obs = to_robot_frame(&world, &ids);
        for (pp, p) in planner_pedestrians(&world, &obs, 0.3).iter().zip(&world.pedestrians) {
            assert!(pp.position.distance(p.position) < 1e-9);
            assert!(pp.velocity.distance(p.velocity) < 1e-9);
        }
    }
}
