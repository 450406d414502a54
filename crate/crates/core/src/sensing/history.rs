use std::collections::{BTreeMap, VecDeque};

use glam::DVec2;
use serde::{Deserialize, Serialize};

use crate::sim::WorldState;

/// Steps of history kept per pedestrian.
pub const HISTORY_LEN: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
struct Entry {
    step: u64,
    time: f64,
    position: DVec2,
    valid: bool,
}

/// Fixed-length view of one pedestrian's track, oldest first. Gaps and the
/// span before the first sighting hold the nearest observed position and
/// are marked invalid.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackWindow {
    pub positions: Vec<DVec2>,
    pub valid: Vec<bool>,
}

impl TrackWindow {
    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }
}

/// Per-pedestrian ring buffers of recent world-frame positions. A track is
/// dropped once it has no valid entry left in the window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryHistory {
    len: usize,
    tracks: BTreeMap<u32, VecDeque<Entry>>,
    step: Option<u64>,
}

impl Default for TrajectoryHistory {
    fn default() -> Self {
        Self::new(HISTORY_LEN)
    }
}

impl TrajectoryHistory {
    pub fn new(len: usize) -> Self {
        assert!(len >= 1);
        Self {
            len,
            tracks: BTreeMap::new(),
            step: None,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.tracks.is_empty()
    }

    pub fn current_step(&self) -> Option<u64> {
        self.step
    }

    pub fn tracked_ids(&self) -> impl Iterator<Item = u32> + '_ {
        self.tracks.keys().copied()
    }

    /// Records the pedestrians visible in `world`. Must be called once per
    /// step with increasing step indices.
    pub fn update(&mut self, world: &WorldState, visible: &[u32]) {
        let step = world.step_index;
        if let Some(prev) = self.step {
            assert!(step > prev, "history steps must increase");
        }
        self.step = Some(step);
        for &id in visible {
            if let Some(p) = world.pedestrian(id) {
                self.tracks.entry(id).or_default().push_back(Entry {
                    step,
                    time: world.time,
                    position: p.position,
                    valid: true,
                });
            }
        }
        for (id, track) in self.tracks.iter_mut() {
            if visible.contains(id) {
                continue;
            }
            let held = track.back().expect("tracks are never empty").position;
            track.push_back(Entry {
                step,
                time: world.time,
                position: held,
                valid: false,
            });
        }
        let len = self.len as u64;
        for track in self.tracks.values_mut() {
            while track.front().is_some_and(|e| e.step + len <= step) {
                track.pop_front();
            }
        }
        self.tracks.retain(|_, t| t.iter().any(|e| e.valid));
    }

    /// Most recent (possibly held) position.
    pub fn latest(&self, id: u32) -> Option<DVec2> {
        self.tracks.get(&id).and_then(|t| t.back()).map(|e| e.position)
    }

    /// Whether `id` was observed at exactly `step`.
    pub fn seen_at(&self, id: u32, step: u64) -> bool {
        self.tracks
            .get(&id)
            .is_some_and(|t| t.iter().any(|e| e.step == step && e.valid))
    }

    /// Timestamps of the stored entries of `id`, oldest first.
    pub fn timestamps(&self, id: u32) -> Vec<f64> {
        self.tracks
            .get(&id)
            .map(|t| t.iter().map(|e| e.time).collect())
            .unwrap_or_default()
    }

    pub fn window(&self, id: u32) -> Option<TrackWindow> {
        let track = self.tracks.get(&id)?;
        let pad = self.len - track.len();
        let first = track.front()?.position;
        let mut positions = vec![first; pad];
        let mut valid = vec![false; pad];
        for e in track {
            positions.push(e.position);
            valid.push(e.valid);
        }
        Some(TrackWindow { positions, valid })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sensing::tests::world_with;
    use proptest::prelude::*;

    fn at_step(mut w: WorldState, step: u64) -> WorldState {
        w.step_index = step;
        w.time = step as f64 * 0.25;
        w
    }

    #[test]
    fn hold_and_mask() {
        let mut h = TrajectoryHistory::new(4);
        let base = world_with(DVec2::ZERO, 0.0, &[DVec2::new(1.0, 0.0)]);
        h.update(&at_step(base.clone(), 0), &[0]);
        let mut moved = at_step(base.clone(), 1);
        moved.pedestrians[0].position = DVec2::new(1.5, 0.0);
        h.update(&moved, &[0]);
        h.update(&at_step(base.clone(), 2), &[]);
        let w = h.window(0).unwrap();
        assert_eq!(w.valid, vec![false, true, true, false]);
        assert_eq!(
            w.positions,
            vec![DVec2::new(1.0, 0.0), DVec2::new(1.0, 0.0), DVec2::new(1.5, 0.0), DVec2::new(1.5, 0.0)]
        );
        assert!(h.seen_at(0, 1) && !h.seen_at(0, 2));
        assert_eq!(h.timestamps(0), vec![0.0, 0.25, 0.5]);
        // Evicted once the last sighting leaves the window.
        for s in 3..6 {
            h.update(&at_step(base.clone(), s), &[]);
        }
        assert!(h.window(0).is_none());
    }

    proptest! {
        #[test]
        fn occluded_steps_are_masked(k in 0usize..HISTORY_LEN, lead in HISTORY_LEN..20usize) {
            let base = world_with(DVec2::ZERO, 0.0, &[DVec2::new(1.0, 0.0)]);
            let mut h = TrajectoryHistory::default();
            let mut step = 0;
            for _ in 0..lead {
                h.update(&at_step(base.clone(), step), &[0]);
                step += 1;
            }
            for _ in 0..k {
                h.update(&at_step(base.clone(), step), &[]);
                step += 1;
            }
            let w = h.window(0).unwrap();
            prop_assert_eq!(w.valid.len(), HISTORY_LEN);
            prop_assert_eq!(HISTORY_LEN - w.valid_count(), k);
            let ts = h.timestamps(0);
            prop_assert!(ts.windows(2).all(|p| p[0] < p[1]));
        }
    }
}
