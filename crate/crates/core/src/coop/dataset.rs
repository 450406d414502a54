use glam::DVec2;
use rand::Rng as _;

use super::net::CoopSample;
use crate::config::SimConfig;
use crate::error::Result;
use crate::rng::{self, Stream};
use crate::sensing::{adjacency_from_positions, observe, TrajectoryHistory, ADJACENCY_SCALE};
use crate::sim::{spawn_scenario, step_world, Control, WorldState};

/// Builds the classifier input for `ids` from their tracked windows,
/// expressed in the current robot frame. Labels come from the world's
/// ground-truth behaviours. Returns `None` when no id is tracked.
pub fn sample_from_history(history: &TrajectoryHistory, world: &WorldState, ids: &[u32]) -> Option<CoopSample> {
    let rot = DVec2::from_angle(-world.robot.heading);
    let origin = world.robot.position;
    let mut trajectories = Vec::new();
    let mut valid = Vec::new();
    let mut labels = Vec::new();
    for &id in ids {
        let Some(w) = history.window(id) else { continue };
        trajectories.push(w.positions.iter().map(|&p| rot.rotate(p - origin)).collect::<Vec<_>>());
        valid.push(w.valid);
        labels.push(world.pedestrian(id).map_or(0, |p| p.behavior.label()));
    }
    if trajectories.is_empty() {
        return None;
    }
    let latest: Vec<DVec2> = trajectories.iter().map(|t| *t.last().expect("window is non-empty")).collect();
    Some(CoopSample {
        adjacency: adjacency_from_positions(&latest, ADJACENCY_SCALE),
        trajectories,
        valid,
        labels,
    })
}

/// Scripted-robot episodes: the robot drives straight at `v_ref` toward its
/// goal while the crowd reacts. Every step with at least one visible
/// pedestrian yields a sample labelled from the simulator's ground truth.
pub fn generate_dataset(config: &SimConfig, n_episodes: usize, seed: u64) -> Result<Vec<CoopSample>> {
    let mut out = Vec::new();
    for ep in 0..n_episodes {
        let mut world = spawn_scenario(config, rng::mix(seed, ep as u64))?;
        let mut history = TrajectoryHistory::default();
        for _ in 0..config.max_steps() {
            world = step_world(&world, Control::new(config.v_ref, 0.0), config);
            let visible = observe(&world, config);
            history.update(&world, &visible);
            if let Some(s) = sample_from_history(&history, &world, &visible) {
                out.push(s);
            }
            if world.robot.distance_to_goal() < config.robot_radius {
                break;
            }
        }
    }
    Ok(out)
}

/// Kinematic toy scenes with an exaggerated behavioural signature: cooperative
/// pedestrians turn steadily away from a virtual robot at the origin while
/// non-cooperative ones walk straight. Each scene has 1–4 pedestrians with
/// 8-step tracks, small position noise and random occlusion gaps.
pub fn separable_dataset(n_samples: usize, history_len: usize, seed: u64) -> Vec<CoopSample> {
    let mut rng = rng::stream(seed, Stream::Dataset);
    let dt = 0.25;
    (0..n_samples)
        .map(|_| {
            let m = rng.gen_range(1..=4);
            let mut trajectories = Vec::with_capacity(m);
            let mut valid = Vec::with_capacity(m);
            let mut labels = Vec::with_capacity(m);
            for _ in 0..m {
                let coop = rng.gen_bool(0.5);
                let mut p = DVec2::from_angle(rng.gen_range(0.0..std::f64::consts::TAU)) * rng.gen_range(1.0..5.0);
                let mut heading: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
                let speed = rng.gen_range(0.6..1.2);
                // Turn so the heading rotates away from the robot bearing.
                let away = DVec2::from_angle(heading).perp_dot(p).signum();
                let turn = if coop { away * rng.gen_range(1.5..2.5) } else { 0.0 };
                let mut track = Vec::with_capacity(history_len);
                let mut mask = Vec::with_capacity(history_len);
                let mut held = p;
                for j in 0..history_len {
                    let noise = DVec2::new(rng.gen_range(-0.01..0.01), rng.gen_range(-0.01..0.01));
                    let seen = j + 1 == history_len || rng.gen_bool(0.9);
                    if seen {
                        held = p + noise;
                    }
                    track.push(held);
                    mask.push(seen);
                    heading += turn * dt;
                    p += DVec2::from_angle(heading) * speed * dt;
                }
                trajectories.push(track);
                valid.push(mask);
                labels.push(coop as u8);
            }
            let latest: Vec<DVec2> = trajectories.iter().map(|t| *t.last().expect("non-empty")).collect();
            CoopSample {
                adjacency: adjacency_from_positions(&latest, ADJACENCY_SCALE),
                trajectories,
                valid,
                labels,
            }
        })
        .collect()
}
