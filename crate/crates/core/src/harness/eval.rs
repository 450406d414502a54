use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::metrics::{summarize, EpisodeRow, MetricsSummary, EPISODE_HEADER};
use super::{run_episode, EpisodeLog, PolicyStack, StackKind};
use crate::config::{Scenario, SimConfig};
use crate::{Error, Result};

/// Runs episodes with seeds `base_seed + i`, `i < n_episodes`. Episodes run
/// in parallel but results are keyed by index, so the summary does not
/// depend on scheduling. `on_log` receives every log in index order.
pub fn evaluate(
    config: &SimConfig,
    stack: &PolicyStack,
    n_episodes: usize,
    base_seed: u64,
    scenario: &str,
    on_log: impl FnMut(usize, &EpisodeLog) -> Result<()>,
) -> Result<MetricsSummary> {
    let seeds: Vec<u64> = (0..n_episodes as u64).map(|i| base_seed.wrapping_add(i)).collect();
    evaluate_seeds(config, stack, &seeds, scenario, on_log)
}

pub fn evaluate_seeds(
    config: &SimConfig,
    stack: &PolicyStack,
    seeds: &[u64],
    scenario: &str,
    mut on_log: impl FnMut(usize, &EpisodeLog) -> Result<()>,
) -> Result<MetricsSummary> {
    if seeds.is_empty() {
        return Err(Error::Config("need at least one episode".into()));
    }
    stack.validate()?;
    let logs = crate::par::map(seeds, |&seed| run_episode(config, stack, seed, scenario));
    let mut rows = Vec::with_capacity(seeds.len());
    for (i, log) in logs.into_iter().enumerate() {
        let log = log?;
        on_log(i, &log)?;
        rows.push(EpisodeRow::from_log(i, &log));
    }
    Ok(summarize(rows))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(text.as_bytes()))
        .map_err(|e| Error::io(path, e))
}

pub fn write_episode_csv(path: &Path, summary: &MetricsSummary) -> Result<()> {
    let mut out = format!("{EPISODE_HEADER}\n");
    for r in &summary.rows {
        out.push_str(&r.csv_row());
        out.push('\n');
    }
    write_text(path, &out)
}

/// Summary JSON without the per-episode rows.
pub fn write_summary(path: &Path, summary: &MetricsSummary, extra: serde_json::Value) -> Result<()> {
    let mut v = serde_json::to_value(summary)?;
    if let serde_json::Value::Object(m) = &mut v {
        m.remove("rows");
        if let serde_json::Value::Object(e) = extra {
            m.extend(e);
        }
    }
    write_text(path, &(serde_json::to_string_pretty(&v)? + "\n"))
}

pub const SWEEP_HEADER: &str = "scenario,h,sr,cr,or,ant";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub scenario: Scenario,
    pub h: usize,
    pub sr: f64,
    pub cr: f64,
    pub or: f64,
    pub ant: Option<f64>,
}

impl SweepRow {
    pub fn csv_row(&self) -> String {
        let ant = self.ant.map_or(String::new(), |a| a.to_string());
        format!("{},{},{},{},{},{}", self.scenario.name(), self.h, self.sr, self.cr, self.or, ant)
    }
}

/// Success rates of every fixed horizon on every scenario; `template`
/// supplies the classifier and planner settings.
pub fn fixed_horizon_sweep(
    base: &SimConfig,
    scenarios: &[Scenario],
    horizons: &[usize],
    n_episodes: usize,
    base_seed: u64,
    template: &PolicyStack,
) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::with_capacity(scenarios.len() * horizons.len());
    for &scenario in scenarios {
        let config = scenario.apply(base);
        for &h in horizons {
            let stack = PolicyStack {
                kind: StackKind::FixedHorizon(h),
                ..template.clone()
            };
            let m = evaluate(&config, &stack, n_episodes, base_seed, scenario.name(), |_, _| Ok(()))?;
            rows.push(SweepRow {
                scenario,
                h,
                sr: m.sr,
                cr: m.cr,
                or: m.or,
                ant: m.ant,
            });
        }
    }
    Ok(rows)
}
