use std::io::{BufRead, Write};
use std::path::Path;
use std::sync::Arc;

use glam::DVec2;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::SimConfig;
use crate::coop::CoopNetParams;
use crate::mpc::{MpcSettings, SolveStatus};
use crate::pipeline::{classify_outcome, CoopMode, Navigator};
use crate::policy::{compute_reward, greedy_horizon, PolicyParams, RewardBreakdown, RewardCoeffs, StepOutcome, H_MAX};
use crate::sensing::observe;
use crate::sim::{orca_velocity_toward, social_force_velocity, spawn_scenario, step_world, wrap_angle, Behavior, Control, WorldState};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "horizon")]
pub enum StackKind {
    /// Learned horizon, learned cooperation labels.
    Full,
    /// Constant horizon; cooperation labels are used when a classifier is
    /// loaded.
    FixedHorizon(usize),
    /// Learned horizon with every pedestrian treated as non-cooperative.
    NoCoop,
    OrcaBaseline,
    SfBaseline,
}

impl StackKind {
    pub fn name(self) -> String {
        match self {
            StackKind::Full => "full".into(),
            StackKind::FixedHorizon(h) => format!("fixed{h}"),
            StackKind::NoCoop => "nocoop".into(),
            StackKind::OrcaBaseline => "orca".into(),
            StackKind::SfBaseline => "sf".into(),
        }
    }
}

/// A navigation stack ready to run: its kind, the parameters it needs and
/// the planner/reward settings.
#[derive(Debug, Clone)]
pub struct PolicyStack {
    pub kind: StackKind,
    pub coop: Option<Arc<CoopNetParams>>,
    pub policy: Option<Arc<PolicyParams>>,
    pub mpc: MpcSettings,
    pub coeffs: RewardCoeffs,
}

impl PolicyStack {
    pub fn new(kind: StackKind) -> Self {
        Self {
            kind,
            coop: None,
            policy: None,
            mpc: MpcSettings::default(),
            coeffs: RewardCoeffs::default(),
        }
    }

    pub fn with_coop(mut self, p: Arc<CoopNetParams>) -> Self {
        self.coop = Some(p);
        self
    }

    pub fn with_policy(mut self, p: Arc<PolicyParams>) -> Self {
        self.policy = Some(p);
        self
    }

    pub fn with_mpc(mut self, mpc: MpcSettings) -> Self {
        self.mpc = mpc;
        self
    }

    /// Checks that the parameters the kind needs are present.
    pub fn validate(&self) -> Result<()> {
        match self.kind {
            StackKind::Full if self.coop.is_none() => Err(Error::MissingParams("full stack needs coop-net parameters")),
            StackKind::Full | StackKind::NoCoop if self.policy.is_none() => {
                Err(Error::MissingParams("learned-horizon stack needs policy parameters"))
            }
            StackKind::FixedHorizon(h) if !(1..=H_MAX).contains(&h) => {
                Err(Error::Config(format!("fixed horizon {h} outside 1..={H_MAX}")))
            }
            _ => Ok(()),
        }
    }

    fn coop_mode(&self) -> CoopMode {
        match (self.kind, &self.coop) {
            (StackKind::Full | StackKind::FixedHorizon(_), Some(p)) => CoopMode::Learned(p.clone()),
            _ => CoopMode::Disabled,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EpisodeOutcome {
    Success,
    Collision,
    Timeout,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PedSnapshot {
    pub id: u32,
    pub position: [f64; 2],
    /// Ground-truth label (1 cooperative).
    pub label: u8,
}

/// One executed step, describing the state before the step, the decision
/// taken and its consequences.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: u64,
    pub time: f64,
    /// SHA-256 (hex, first 16 bytes) of the pre-step world snapshot.
    pub digest: String,
    pub robot: [f64; 3],
    pub pedestrians: Vec<PedSnapshot>,
    pub visible: Vec<u32>,
    pub coop_probs: Vec<f64>,
    pub horizon: Option<usize>,
    pub control: Control,
    pub reward: RewardBreakdown,
    pub min_barrier: Option<f64>,
    pub mpc_status: Option<SolveStatus>,
    /// The post-step robot is inside some pedestrian's safety distance.
    pub intrusion: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub scenario: String,
    pub stack: String,
    pub seed: u64,
    pub goal: [f64; 2],
    pub sensing_range: f64,
    pub robot_radius: f64,
    pub ped_radius: f64,
    /// Straight-line distance from the start to the goal.
    pub start_distance: f64,
    pub steps: Vec<StepLog>,
    pub outcome: EpisodeOutcome,
    pub duration: f64,
    pub path_length: f64,
    pub notes: Vec<String>,
}

/// One line of the JSON-lines log: a header, one line per step, a footer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LogLine {
    Episode {
        scenario: String,
        stack: String,
        seed: u64,
        goal: [f64; 2],
        sensing_range: f64,
        robot_radius: f64,
        ped_radius: f64,
        start_distance: f64,
    },
    Step(StepLog),
    Outcome {
        outcome: EpisodeOutcome,
        duration: f64,
        path_length: f64,
        notes: Vec<String>,
    },
}

impl EpisodeLog {
    pub fn intrusion_ratio(&self) -> f64 {
        if self.steps.is_empty() {
            return 0.0;
        }
        self.steps.iter().filter(|s| s.intrusion).count() as f64 / self.steps.len() as f64
    }

    pub fn degraded_steps(&self) -> usize {
        self.steps.iter().filter(|s| s.mpc_status == Some(SolveStatus::Degraded)).count()
    }

    pub fn to_jsonl(&self) -> String {
        let mut lines = vec![LogLine::Episode {
            scenario: self.scenario.clone(),
            stack: self.stack.clone(),
            seed: self.seed,
            goal: self.goal,
            sensing_range: self.sensing_range,
            robot_radius: self.robot_radius,
            ped_radius: self.ped_radius,
            start_distance: self.start_distance,
        }];
        lines.extend(self.steps.iter().cloned().map(LogLine::Step));
        lines.push(LogLine::Outcome {
            outcome: self.outcome,
            duration: self.duration,
            path_length: self.path_length,
            notes: self.notes.clone(),
        });
        let mut out = String::new();
        for l in lines {
            out.push_str(&serde_json::to_string(&l).expect("log serializes"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(reader: impl BufRead) -> Result<Self> {
        let mut header = None;
        let mut steps = Vec::new();
        let mut footer = None;
        for line in reader.lines() {
            let line = line.map_err(|e| Error::io("<log>", e))?;
            if line.trim().is_empty() {
                continue;
            }
            match serde_json::from_str::<LogLine>(&line)? {
                h @ LogLine::Episode { .. } => header = Some(h),
                LogLine::Step(s) => steps.push(s),
                f @ LogLine::Outcome { .. } => footer = Some(f),
            }
        }
        let (
            Some(LogLine::Episode {
                scenario,
                stack,
                seed,
                goal,
                sensing_range,
                robot_radius,
                ped_radius,
                start_distance,
            }),
            Some(LogLine::Outcome {
                outcome,
                duration,
                path_length,
                notes,
            }),
        ) = (header, footer)
        else {
            return Err(Error::Config("log lacks an episode header or outcome line".into()));
        };
        Ok(Self {
            scenario,
            stack,
            seed,
            goal,
            sensing_range,
            robot_radius,
            ped_radius,
            start_distance,
            steps,
            outcome,
            duration,
            path_length,
            notes,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::File::create(path)
            .and_then(|mut f| f.write_all(self.to_jsonl().as_bytes()))
            .map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::from_jsonl(std::io::BufReader::new(f))
    }
}

fn digest(world: &WorldState) -> String {
    let bytes = serde_json::to_vec(world).expect("world serializes");
    Sha256::digest(&bytes)[..16].iter().map(|b| format!("{b:02x}")).collect()
}

/// Whether the robot is closer to any pedestrian than that pedestrian's
/// safety distance, using ground-truth cooperation labels.
pub fn intrusion(world: &WorldState, mpc: &MpcSettings) -> bool {
    let r = &world.robot;
    world.pedestrians.iter().any(|p| {
        let gap = r.position.distance(p.position) - r.radius - p.radius;
        gap - mpc.margins.d_safety(p.behavior.label()) < 0.0
    })
}

/// Nearest unicycle command to a desired planar velocity: turn toward it as
/// far as the yaw-rate bound allows, then take the speed whose displacement
/// along the new heading best matches it.
pub fn inverse_kinematics(heading: f64, desired: DVec2, config: &SimConfig) -> Control {
    if desired.length_squared() < 1e-12 {
        return Control::ZERO;
    }
    let err = wrap_angle(desired.to_angle() - heading);
    let w = (err / config.dt).clamp(-config.w_max, config.w_max);
    // the unicycle translates along the pre-step heading
    let dir = DVec2::from_angle(heading);
    let v = desired.dot(dir).clamp(config.v_min.max(0.0), config.v_max);
    Control::new(v, w)
}

/// Reactive baseline command: the robot runs ORCA or social force on the
/// pedestrians it can see and tracks the result with inverse kinematics.
pub fn baseline_control(kind: StackKind, world: &WorldState, visible: &[u32], config: &SimConfig) -> Control {
    let mut agent = world.robot.as_agent();
    agent.pref_speed = config.v_ref.min(config.v_max);
    let neighbors: Vec<_> = visible.iter().filter_map(|&id| world.pedestrian(id)).collect();
    let desired = match kind {
        StackKind::OrcaBaseline => {
            let pref = agent.preferred_velocity(config.dt);
            orca_velocity_toward(&agent, pref, &neighbors, &config.orca_params, config.dt)
        }
        StackKind::SfBaseline => social_force_velocity(
            &agent,
            &neighbors,
            &config.sf_params,
            config.dt,
            crate::rng::mix(world.rng_seed, world.step_index),
        ),
        _ => unreachable!("not a baseline"),
    };
    inverse_kinematics(world.robot.heading, desired, config)
}

/// Runs one episode of `stack` on the scenario spawned from `seed`.
pub fn run_episode(config: &SimConfig, stack: &PolicyStack, seed: u64, scenario: &str) -> Result<EpisodeLog> {
    let world = spawn_scenario(config, seed)?;
    run_episode_from(world, config, stack, seed, scenario)
}

/// Runs one episode from a given initial world.
pub fn run_episode_from(
    mut world: WorldState,
    config: &SimConfig,
    stack: &PolicyStack,
    seed: u64,
    scenario: &str,
) -> Result<EpisodeLog> {
    stack.validate()?;
    let mut nav = Navigator::new(config.clone(), stack.mpc, stack.coeffs, stack.coop_mode());
    let start = world.robot.position;
    let mut steps = Vec::new();
    let mut path_length = 0.0;
    let mut notes = Vec::new();
    let outcome = loop {
        let robot = &world.robot;
        let snapshot = (
            digest(&world),
            [robot.position.x, robot.position.y, robot.heading],
            world
                .pedestrians
                .iter()
                .map(|p| PedSnapshot {
                    id: p.id,
                    position: [p.position.x, p.position.y],
                    label: (p.behavior == Behavior::Cooperative) as u8,
                })
                .collect(),
        );
        let (next, visible, coop_probs, horizon, control, reward, min_barrier, status, outcome) = match stack.kind {
            StackKind::OrcaBaseline | StackKind::SfBaseline => {
                let visible = observe(&world, config);
                let control = baseline_control(stack.kind, &world, &visible, config).clamped(config);
                let next = step_world(&world, control, config);
                let outcome = classify_outcome(&next, config);
                let labels = vec![0u8; visible.len()];
                let reward = compute_reward(
                    world.robot.distance_to_goal(),
                    next.robot.distance_to_goal(),
                    control,
                    H_MAX,
                    &labels,
                    outcome,
                    &stack.coeffs,
                );
                let probs = vec![0.0; visible.len()];
                (next, visible, probs, None, control, reward, None, None, outcome)
            }
            kind => {
                let perception = nav.perceive(&world);
                let h = match kind {
                    StackKind::FixedHorizon(h) => h,
                    _ => greedy_horizon(stack.policy.as_ref().expect("validated"), &perception.input),
                };
                let r = nav.step(&world, &perception, h);
                let min_barrier = r.solution.min_barrier();
                let status = r.solution.status;
                (
                    r.world,
                    perception.visible.clone(),
                    perception.coop_probs(),
                    Some(h),
                    r.control,
                    r.reward,
                    min_barrier,
                    Some(status),
                    r.outcome,
                )
            }
        };
        if status == Some(SolveStatus::Degraded) {
            notes.push(format!("step {}: MPC degraded, fell back to best sampled sequence", world.step_index));
        }
        path_length += next.robot.position.distance(world.robot.position);
        steps.push(StepLog {
            step: world.step_index,
            time: world.time,
            digest: snapshot.0,
            robot: snapshot.1,
            pedestrians: snapshot.2,
            visible,
            coop_probs,
            horizon,
            control,
            reward,
            min_barrier,
            mpc_status: status,
            intrusion: intrusion(&next, &stack.mpc),
        });
        world = next;
        match outcome {
            StepOutcome::Running => continue,
            StepOutcome::Goal => break EpisodeOutcome::Success,
            StepOutcome::Collision => break EpisodeOutcome::Collision,
            StepOutcome::Timeout => break EpisodeOutcome::Timeout,
        }
    };
    Ok(EpisodeLog {
        scenario: scenario.to_string(),
        stack: stack.kind.name(),
        seed,
        goal: [world.robot.goal.x, world.robot.goal.y],
        sensing_range: config.sensing_range,
        robot_radius: config.robot_radius,
        ped_radius: config.ped_radius,
        start_distance: start.distance(world.robot.goal),
        steps,
        outcome,
        duration: world.time,
        path_length,
        notes,
    })
}
