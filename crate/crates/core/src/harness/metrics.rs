use serde::{Deserialize, Serialize};

use super::{EpisodeLog, EpisodeOutcome};

/// Per-episode CSV columns.
pub const EPISODE_HEADER: &str = "episode,seed,outcome,duration,path_length,intrusion_ratio,steps,degraded_steps";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRow {
    pub episode: usize,
    pub seed: u64,
    pub outcome: EpisodeOutcome,
    pub duration: f64,
    pub path_length: f64,
    pub intrusion_ratio: f64,
    pub steps: usize,
    pub degraded_steps: usize,
}

impl EpisodeRow {
    pub fn from_log(episode: usize, log: &EpisodeLog) -> Self {
        Self {
            episode,
            seed: log.seed,
            outcome: log.outcome,
            duration: log.duration,
            path_length: log.path_length,
            intrusion_ratio: log.intrusion_ratio(),
            steps: log.steps.len(),
            degraded_steps: log.degraded_steps(),
        }
    }

    pub fn csv_row(&self) -> String {
        let outcome = match self.outcome {
            EpisodeOutcome::Success => "success",
            EpisodeOutcome::Collision => "collision",
            EpisodeOutcome::Timeout => "timeout",
        };
        format!(
            "{},{},{},{},{},{},{},{}",
            self.episode,
            self.seed,
            outcome,
            self.duration,
            self.path_length,
            self.intrusion_ratio,
            self.steps,
            self.degraded_steps
        )
    }
}

/// Aggregate navigation metrics.
///
/// * `sr`, `cr`, `or` — success, collision and timeout rates (%).
/// * `ant`, `atl` — mean navigation time (s) and trajectory length (m) over
///   successful episodes; `None` without successes.
/// * `air` — per-episode share of steps ending with the robot inside some
///   pedestrian's safety distance (the planner's `d_safety` for that
///   pedestrian's true label), averaged over episodes (%).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub n_episodes: usize,
    pub sr: f64,
    pub cr: f64,
    pub or: f64,
    pub ant: Option<f64>,
    pub atl: Option<f64>,
    pub air: f64,
    pub rows: Vec<EpisodeRow>,
}

pub fn summarize(rows: Vec<EpisodeRow>) -> MetricsSummary {
    let n = rows.len();
    let pct = |o: EpisodeOutcome| {
        if n == 0 {
            0.0
        } else {
            100.0 * rows.iter().filter(|r| r.outcome == o).count() as f64 / n as f64
        }
    };
    let successes: Vec<&EpisodeRow> = rows.iter().filter(|r| r.outcome == EpisodeOutcome::Success).collect();
    let mean_over_successes = |f: fn(&EpisodeRow) -> f64| {
        (!successes.is_empty()).then(|| successes.iter().map(|r| f(r)).sum::<f64>() / successes.len() as f64)
    };
    MetricsSummary {
        n_episodes: n,
        sr: pct(EpisodeOutcome::Success),
        cr: pct(EpisodeOutcome::Collision),
        or: pct(EpisodeOutcome::Timeout),
        ant: mean_over_successes(|r| r.duration),
        atl: mean_over_successes(|r| r.path_length),
        air: if n == 0 {
            0.0
        } else {
            100.0 * rows.iter().map(|r| r.intrusion_ratio).sum::<f64>() / n as f64
        },
        rows,
    }
}
