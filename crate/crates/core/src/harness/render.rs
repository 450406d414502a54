use std::fmt::Write;

use super::{EpisodeLog, SweepRow};
use crate::config::Scenario;

const COOP_COLOR: &str = "#2e9e44";
const NONCOOP_COLOR: &str = "#d62728";
const ROBOT_COLOR: &str = "#e6b422";
const SIZE: f64 = 600.0;

fn header(out: &mut String, width: f64, height: f64) {
    let _ = writeln!(out, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{width}" height="{height}" viewBox="0 0 {width} {height}">"#
    );
    let _ = writeln!(out, r#"<rect width="{width}" height="{height}" fill="white"/>"#);
}

/// Top-down trajectory plot: the robot's path as timestamped gold circles,
/// pedestrians at the final step (green cooperative, red non-cooperative),
/// the sensing range around the final robot position and the goal as a star.
pub fn render_trajectory(log: &EpisodeLog) -> String {
    let extent = log
        .steps
        .iter()
        .flat_map(|s| std::iter::once([s.robot[0], s.robot[1]]).chain(s.pedestrians.iter().map(|p| p.position)))
        .chain(std::iter::once(log.goal))
        .fold(1.0f64, |m, [x, y]| m.max(x.abs()).max(y.abs()))
        + 1.0;
    let scale = SIZE / (2.0 * extent);
    let px = |x: f64| (x + extent) * scale;
    let py = |y: f64| (extent - y) * scale;

    let mut out = String::new();
    header(&mut out, SIZE, SIZE);
    let _ = writeln!(
        out,
        r#"<text x="8" y="18" font-family="sans-serif" font-size="13">{} / {} / seed {} — {:?}, {:.2} s</text>"#,
        log.scenario, log.stack, log.seed, log.outcome, log.duration
    );
    if let Some(last) = log.steps.last() {
        let _ = writeln!(
            out,
            r##"<circle class="sensing" cx="{:.2}" cy="{:.2}" r="{:.2}" fill="none" stroke="#888" stroke-dasharray="4 3"/>"##,
            px(last.robot[0]),
            py(last.robot[1]),
            log.sensing_range * scale
        );
        for p in &last.pedestrians {
            let (class, color) = if p.label == 1 {
                ("cooperative", COOP_COLOR)
            } else {
                ("non-cooperative", NONCOOP_COLOR)
            };
            let _ = writeln!(
                out,
                r#"<circle class="{class}" cx="{:.2}" cy="{:.2}" r="{:.2}" fill="{color}" fill-opacity="0.7"/>"#,
                px(p.position[0]),
                py(p.position[1]),
                log.ped_radius * scale
            );
        }
    }
    for (i, s) in log.steps.iter().enumerate() {
        let (x, y) = (px(s.robot[0]), py(s.robot[1]));
        let _ = writeln!(
            out,
            r##"<circle class="robot" cx="{x:.2}" cy="{y:.2}" r="{:.2}" fill="{ROBOT_COLOR}" fill-opacity="0.6" stroke="#8a6d0b"/>"##,
            log.robot_radius * scale
        );
        if i % 8 == 0 {
            let _ = writeln!(
                out,
                r#"<text x="{:.2}" y="{:.2}" font-family="sans-serif" font-size="10">{:.1}</text>"#,
                x + 6.0,
                y - 6.0,
                s.time
            );
        }
    }
    let (gx, gy) = (px(log.goal[0]), py(log.goal[1]));
    let star: Vec<String> = (0..10)
        .map(|k| {
            let r = if k % 2 == 0 { 12.0 } else { 5.0 };
            let a = -std::f64::consts::FRAC_PI_2 + k as f64 * std::f64::consts::PI / 5.0;
            format!("{:.2},{:.2}", gx + r * a.cos(), gy + r * a.sin())
        })
        .collect();
    let _ = writeln!(out, r##"<polygon class="goal" points="{}" fill="#1f4e9e"/>"##, star.join(" "));
    out.push_str("</svg>\n");
    out
}

/// Success rate against horizon, one polyline per scenario.
pub fn render_sweep(rows: &[SweepRow]) -> String {
    let (w, h) = (640.0, 420.0);
    let (left, right, top, bottom) = (60.0, 120.0, 30.0, 50.0);
    let h_max = rows.iter().map(|r| r.h).max().unwrap_or(1).max(2) as f64;
    let h_min = rows.iter().map(|r| r.h).min().unwrap_or(1) as f64;
    let span = (h_max - h_min).max(1.0);
    let px = |hz: f64| left + (hz - h_min) / span * (w - left - right);
    let py = |sr: f64| top + (100.0 - sr) / 100.0 * (h - top - bottom);

    let mut out = String::new();
    header(&mut out, w, h);
    let _ = writeln!(
        out,
        r#"<line x1="{left}" y1="{}" x2="{}" y2="{}" stroke="black"/><line x1="{left}" y1="{top}" x2="{left}" y2="{}" stroke="black"/>"#,
        h - bottom,
        w - right,
        h - bottom,
        h - bottom
    );
    for sr in [0, 25, 50, 75, 100] {
        let y = py(sr as f64);
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{:.1}" font-family="sans-serif" font-size="11" text-anchor="end">{sr}</text>"#,
            left - 6.0,
            y + 4.0
        );
    }
    let mut ticks: Vec<usize> = rows.iter().map(|r| r.h).collect();
    ticks.sort_unstable();
    ticks.dedup();
    for t in ticks {
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{}" font-family="sans-serif" font-size="11" text-anchor="middle">{t}</text>"#,
            px(t as f64),
            h - bottom + 16.0
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{:.1}" y="{}" font-family="sans-serif" font-size="12" text-anchor="middle">prediction horizon (steps)</text>"#,
        (left + w - right) / 2.0,
        h - 12.0
    );
    let _ = writeln!(
        out,
        r#"<text x="14" y="{:.1}" font-family="sans-serif" font-size="12" transform="rotate(-90 14 {:.1})" text-anchor="middle">success rate (%)</text>"#,
        (top + h - bottom) / 2.0,
        (top + h - bottom) / 2.0
    );
    let colors = ["#1f77b4", "#ff7f0e", "#2ca02c"];
    for (k, scenario) in Scenario::ALL.iter().enumerate() {
        let mut pts: Vec<(usize, f64)> = rows.iter().filter(|r| r.scenario == *scenario).map(|r| (r.h, r.sr)).collect();
        if pts.is_empty() {
            continue;
        }
        pts.sort_by_key(|p| p.0);
        let coords: Vec<String> = pts.iter().map(|&(hz, sr)| format!("{:.1},{:.1}", px(hz as f64), py(sr))).collect();
        let c = colors[k];
        let _ = writeln!(
            out,
            r#"<polyline class="series" points="{}" fill="none" stroke="{c}" stroke-width="2"/>"#,
            coords.join(" ")
        );
        for &(hz, sr) in &pts {
            let _ = writeln!(out, r#"<circle cx="{:.1}" cy="{:.1}" r="3" fill="{c}"/>"#, px(hz as f64), py(sr));
        }
        let ly = top + 20.0 * k as f64;
        let _ = writeln!(
            out,
            r#"<line x1="{}" y1="{ly}" x2="{}" y2="{ly}" stroke="{c}" stroke-width="2"/><text x="{}" y="{}" font-family="sans-serif" font-size="12">{}</text>"#,
            w - right + 10.0,
            w - right + 30.0,
            w - right + 36.0,
            ly + 4.0,
            scenario.name()
        );
    }
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::super::{EpisodeOutcome, StepLog};
    use super::super::episode::PedSnapshot;
    use super::*;
    use crate::policy::RewardBreakdown;
    use crate::sim::Control;

    fn log(n_steps: usize) -> EpisodeLog {
        let steps = (0..n_steps)
            .map(|i| StepLog {
                step: i as u64,
                time: i as f64 * 0.25,
                digest: String::new(),
                robot: [i as f64 * 0.25, 0.0, 0.0],
                pedestrians: vec![
                    PedSnapshot {
                        id: 0,
                        position: [1.0, 1.0],
                        label: 1,
                    },
                    PedSnapshot {
                        id: 1,
                        position: [-1.0, 2.0],
                        label: 0,
                    },
                ],
                visible: vec![0, 1],
                coop_probs: vec![0.9, 0.1],
                horizon: Some(3),
                control: Control::new(1.0, 0.0),
                reward: RewardBreakdown::default(),
                min_barrier: None,
                mpc_status: None,
                intrusion: false,
            })
            .collect();
        EpisodeLog {
            scenario: "mid".into(),
            stack: "full".into(),
            seed: 0,
            goal: [6.0, 0.0],
            sensing_range: 5.0,
            robot_radius: 0.3,
            ped_radius: 0.3,
            start_distance: 6.0,
            steps,
            outcome: EpisodeOutcome::Success,
            duration: 0.25 * n_steps as f64,
            path_length: 0.25 * n_steps as f64,
            notes: vec![],
        }
    }

    fn parse(svg: &str) -> roxmltree::Document<'_> {
        roxmltree::Document::parse(svg).expect("well-formed XML")
    }

    #[test]
    fn one_step_one_robot_marker() {
        let svg = render_trajectory(&log(1));
        let doc = parse(&svg);
        let robots = doc.descendants().filter(|n| n.attribute("class") == Some("robot")).count();
        assert_eq!(robots, 1);
    }

    #[test]
    fn legend_colors() {
        let svg = render_trajectory(&log(5));
        let doc = parse(&svg);
        let fill = |class: &str| {
            doc.descendants()
                .find(|n| n.attribute("class") == Some(class))
                .and_then(|n| n.attribute("fill"))
                .map(str::to_string)
        };
        assert_eq!(fill("cooperative").as_deref(), Some(COOP_COLOR));
        assert_eq!(fill("non-cooperative").as_deref(), Some(NONCOOP_COLOR));
        assert_eq!(fill("robot").as_deref(), Some(ROBOT_COLOR));
        assert!(fill("goal").is_some());
        assert!(doc.descendants().any(|n| n.attribute("class") == Some("sensing")));
    }

    #[test]
    fn sweep_plot_has_one_line_per_scenario() {
        let rows: Vec<SweepRow> = [Scenario::Low, Scenario::High]
            .iter()
            .flat_map(|&s| {
                (1..=3).map(move |h| SweepRow {
                    scenario: s,
                    h,
                    sr: 30.0 * h as f64,
                    cr: 0.0,
                    or: 100.0 - 30.0 * h as f64,
                    ant: None,
                })
            })
            .collect();
        let svg = render_sweep(&rows);
        let doc = parse(&svg);
        assert_eq!(doc.descendants().filter(|n| n.attribute("class") == Some("series")).count(), 2);
    }
}
