//! Episode execution with the full stack, its ablations and the reactive
//! baselines; metrics, sweeps and rendering.

mod episode;
mod eval;
mod metrics;
mod render;

pub use episode::{
    baseline_control, intrusion, run_episode, run_episode_from, EpisodeLog, EpisodeOutcome, LogLine, PolicyStack,
    StackKind, StepLog,
};
pub use eval::{evaluate, evaluate_seeds, fixed_horizon_sweep, write_episode_csv, write_summary, SweepRow, SWEEP_HEADER};
pub use metrics::{summarize, EpisodeRow, MetricsSummary, EPISODE_HEADER};
pub use render::{render_sweep, render_trajectory};
