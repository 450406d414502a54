use serde::{Deserialize, Serialize};

use super::{PedestrianObservation, TrajectoryHistory};
use crate::sim::RobotState;

/// Robot node width: position (2), velocity (2), heading, goal (2),
/// reference speed, radius.
pub const ROBOT_FEATURES: usize = 9;

/// Observation graph at one step. Node 0 is the robot, node `i + 1` is
/// `ped_nodes[i]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpatioTemporalGraph {
    pub robot_node: [f64; ROBOT_FEATURES],
    pub ped_nodes: Vec<PedestrianObservation>,
    /// Undirected node pairs `(a, b)` with `a < b`.
    pub spatial_edges: Vec<(usize, usize)>,
    /// Pedestrians seen at both the previous and the current step.
    pub temporal_edges: Vec<u32>,
}

impl SpatioTemporalGraph {
    pub fn n_nodes(&self) -> usize {
        self.ped_nodes.len() + 1
    }

    pub fn labels(&self) -> Vec<u8> {
        self.ped_nodes.iter().map(|o| o.coop_label).collect()
    }
}

pub fn robot_features(robot: &RobotState) -> [f64; ROBOT_FEATURES] {
    [
        robot.position.x,
        robot.position.y,
        robot.velocity.x,
        robot.velocity.y,
        robot.heading,
        robot.goal.x,
        robot.goal.y,
        robot.v_ref,
        robot.radius,
    ]
}

/// Connects every pair of current nodes spatially, and each pedestrian
/// observed at the previous step to itself temporally. `history` must
/// already include the current step.
pub fn build_graph(history: &TrajectoryHistory, robot: &RobotState, obs: &[PedestrianObservation]) -> SpatioTemporalGraph {
    let n = obs.len() + 1;
    let spatial_edges = (0..n).flat_map(|a| (a + 1..n).map(move |b| (a, b))).collect();
    let temporal_edges = match history.current_step() {
        Some(step) if step > 0 => obs
            .iter()
            .map(|o| o.ped_id)
            .filter(|&id| history.seen_at(id, step) && history.seen_at(id, step - 1))
            .collect(),
        _ => Vec::new(),
    };
    SpatioTemporalGraph {
        robot_node: robot_features(robot),
        ped_nodes: obs.to_vec(),
        spatial_edges,
        temporal_edges,
    }
}
