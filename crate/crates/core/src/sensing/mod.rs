//! Partial observability: range and occlusion limited visibility,
//! robot-frame observations, per-pedestrian histories and the
//! spatio-temporal graph fed to the horizon policy.

mod graph;
mod history;

use glam::DVec2;
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::config::SimConfig;
use crate::sim::WorldState;

pub use graph::{build_graph, robot_features, SpatioTemporalGraph, ROBOT_FEATURES};
pub use history::{TrackWindow, TrajectoryHistory, HISTORY_LEN};

/// Length scale of the adjacency kernel (m).
pub const ADJACENCY_SCALE: f64 = 2.0;

/// A visible pedestrian in the robot frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PedestrianObservation {
    pub ped_id: u32,
    pub rel_position: DVec2,
    pub rel_velocity: DVec2,
    pub coop_prob: f64,
    pub coop_label: u8,
}

impl PedestrianObservation {
    pub fn set_coop_prob(&mut self, p: f64) {
        self.coop_prob = p;
        self.coop_label = (p >= 0.5) as u8;
    }
}

/// Distance from `c` to the segment `a`–`b`.
fn segment_distance(a: DVec2, b: DVec2, c: DVec2) -> f64 {
    let ab = b - a;
    let len2 = ab.length_squared();
    if len2 == 0.0 {
        return a.distance(c);
    }
    let t = ((c - a).dot(ab) / len2).clamp(0.0, 1.0);
    (a + ab * t).distance(c)
}

/// Ids (ascending) of pedestrians within sensing range whose line of sight
/// from the robot centre is not blocked by the disc of a nearer pedestrian.
pub fn observe(world: &WorldState, config: &SimConfig) -> Vec<u32> {
    let origin = world.robot.position;
    let mut visible: Vec<u32> = world
        .pedestrians
        .iter()
        .filter(|p| {
            let d = p.position.distance(origin);
            d <= config.sensing_range
                && !world.pedestrians.iter().any(|o| {
                    o.id != p.id
                        && o.position.distance(origin) < d
                        && segment_distance(origin, p.position, o.position) < o.radius
                })
        })
        .map(|p| p.id)
        .collect();
    visible.sort_unstable();
    visible
}

/// Robot-frame relative positions and velocities of `visible` pedestrians.
/// Cooperation fields are left at zero.
pub fn to_robot_frame(world: &WorldState, visible: &[u32]) -> Vec<PedestrianObservation> {
    let robot = &world.robot;
    let rot = DVec2::from_angle(-robot.heading);
    visible
        .iter()
        .filter_map(|&id| world.pedestrian(id))
        .map(|p| PedestrianObservation {
            ped_id: p.id,
            rel_position: rot.rotate(p.position - robot.position),
            rel_velocity: rot.rotate(p.velocity - robot.velocity),
            coop_prob: 0.0,
            coop_label: 0,
        })
        .collect()
}

/// Inverse of [`to_robot_frame`] for a position.
pub fn to_world_frame(robot_position: DVec2, robot_heading: f64, rel: DVec2) -> DVec2 {
    robot_position + DVec2::from_angle(robot_heading).rotate(rel)
}

/// `A[i][j] = exp(−‖p_i − p_j‖ / ℓ)` off the diagonal, zero on it.
pub fn adjacency_from_positions(positions: &[DVec2], scale: f64) -> Array2<f64> {
    let m = positions.len();
    Array2::from_shape_fn((m, m), |(i, j)| {
        if i == j {
            0.0
        } else {
            (-positions[i].distance(positions[j]) / scale).exp()
        }
    })
}

/// Adjacency of the `visible` pedestrians from their latest tracked positions.
pub fn build_adjacency(history: &TrajectoryHistory, visible: &[u32]) -> Array2<f64> {
    let positions: Vec<DVec2> = visible
        .iter()
        .map(|&id| history.latest(id).expect("visible pedestrian is tracked"))
        .collect();
    adjacency_from_positions(&positions, ADJACENCY_SCALE)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Controller;
    use crate::sim::{AgentState, Behavior, RobotState};
    use proptest::prelude::*;

    pub(crate) fn world_with(robot: DVec2, heading: f64, peds: &[DVec2]) -> WorldState {
        WorldState {
            robot: RobotState {
                position: robot,
                heading,
                velocity: DVec2::ZERO,
                goal: DVec2::new(6.0, 0.0),
                v_ref: 1.0,
                radius: 0.3,
            },
            pedestrians: peds
                .iter()
                .enumerate()
                .map(|(i, &p)| AgentState {
                    id: i as u32,
                    position: p,
                    velocity: DVec2::ZERO,
                    radius: 0.3,
                    goal: DVec2::ZERO,
                    pref_speed: 1.0,
                    behavior: Behavior::NonCooperative,
                    controller: Controller::Orca,
                })
                .collect(),
            time: 0.0,
            step_index: 0,
            rng_seed: 0,
        }
    }

    #[test]
    fn range_limit() {
        let cfg = SimConfig::default();
        let w = world_with(DVec2::ZERO, 0.0, &[DVec2::new(6.0, 0.0), DVec2::new(0.0, 4.9)]);
        assert_eq!(observe(&w, &cfg), vec![1]);
        assert!(observe(&world_with(DVec2::ZERO, 0.0, &[]), &cfg).is_empty());
    }

    #[test]
    fn occlusion_on_same_ray() {
        let cfg = SimConfig::default();
        let w = world_with(DVec2::ZERO, 0.0, &[DVec2::new(4.0, 0.0), DVec2::new(2.0, 0.0)]);
        assert_eq!(observe(&w, &cfg), vec![1]);
        // Segment–disc oracle: the ray to (4, 0.5) passes (2, 0) at
        // distance 2·0.5/√16.25 ≈ 0.248 < 0.3, so it is still hidden; at
        // y = 0.7 the distance is ≈ 0.345 and it shows.
        let d = |y: f64| 2.0 * y / (16.0 + y * y).sqrt();
        assert!(d(0.5) < 0.3 && d(0.7) > 0.3);
        let w = world_with(DVec2::ZERO, 0.0, &[DVec2::new(4.0, 0.5), DVec2::new(2.0, 0.0)]);
        assert_eq!(observe(&w, &cfg), vec![1]);
        let w = world_with(DVec2::ZERO, 0.0, &[DVec2::new(4.0, 0.7), DVec2::new(2.0, 0.0)]);
        assert_eq!(observe(&w, &cfg), vec![0, 1]);
    }

    #[test]
    fn robot_frame() {
        let w = world_with(DVec2::ZERO, 0.0, &[DVec2::new(1.0, 0.0)]);
        let o = to_robot_frame(&w, &[0]);
        assert_eq!(o[0].rel_position, DVec2::new(1.0, 0.0));
        let w = world_with(DVec2::ZERO, std::f64::consts::FRAC_PI_2, &[DVec2::new(0.0, 1.0)]);
        let o = to_robot_frame(&w, &[0]);
        assert!((o[0].rel_position - DVec2::new(1.0, 0.0)).length() < 1e-15);
        let mut w = world_with(DVec2::ZERO, 0.3, &[DVec2::new(0.0, 1.0)]);
        w.robot.velocity = DVec2::new(0.4, -0.2);
        w.pedestrians[0].velocity = DVec2::new(0.4, -0.2);
        assert_eq!(to_robot_frame(&w, &[0])[0].rel_velocity, DVec2::ZERO);
    }

    #[test]
    fn adjacency_values() {
        let a = adjacency_from_positions(&[DVec2::ZERO, DVec2::ZERO], 2.0);
        assert_eq!(a[[0, 1]], 1.0);
        assert_eq!(a[[0, 0]], 0.0);
        let a = adjacency_from_positions(&[DVec2::ZERO, DVec2::new(0.0, 2.0)], 2.0);
        assert!((a[[1, 0]] - 0.367_879_441_171_442_33).abs() < 1e-15);
        let a = adjacency_from_positions(&[DVec2::ONE], 2.0);
        assert_eq!(a, Array2::<f64>::zeros((1, 1)));
    }

    fn arb_points() -> impl Strategy<Value = Vec<(f64, f64)>> {
        proptest::collection::vec((-6.0f64..6.0, -6.0f64..6.0), 0..12)
    }

    proptest! {
        #[test]
        fn removing_a_pedestrian_never_hides_another(pts in arb_points(), drop in 0usize..12) {
            let cfg = SimConfig::default();
            let peds: Vec<DVec2> = pts.iter().map(|&(x, y)| DVec2::new(x, y)).collect();
            let full = world_with(DVec2::new(0.1, -0.2), 0.0, &peds);
            let before = observe(&full, &cfg);
            if !peds.is_empty() {
                let gone = (drop % peds.len()) as u32;
                let mut reduced = full.clone();
                reduced.pedestrians.retain(|p| p.id != gone);
                let after = observe(&reduced, &cfg);
                for id in before.into_iter().filter(|&id| id != gone) {
                    prop_assert!(after.contains(&id));
                }
            }
        }

        #[test]
        fn frame_round_trip(pts in arb_points(), heading in -3.2f64..3.2, rx in -5.0f64..5.0, ry in -5.0f64..5.0) {
            let peds: Vec<DVec2> = pts.iter().map(|&(x, y)| DVec2::new(x, y)).collect();
            let w = world_with(DVec2::new(rx, ry), heading, &peds);
            let ids: Vec<u32> = (0..peds.len() as u32).collect();
            for o in to_robot_frame(&w, &ids) {
                let back = to_world_frame(w.robot.position, w.robot.heading, o.rel_position);
                prop_assert!((back - peds[o.ped_id as usize]).length() < 1e-12);
            }
        }

        #[test]
        fn adjacency_is_symmetric_in_unit_range(pts in arb_points()) {
            let peds: Vec<DVec2> = pts.iter().map(|&(x, y)| DVec2::new(x, y)).collect();
            let a = adjacency_from_positions(&peds, ADJACENCY_SCALE);
            for i in 0..peds.len() {
                prop_assert_eq!(a[[i, i]], 0.0);
                for j in 0..peds.len() {
                    prop_assert_eq!(a[[i, j]], a[[j, i]]);
                    prop_assert!((0.0..=1.0).contains(&a[[i, j]]));
                }
            }
        }
    }
}
