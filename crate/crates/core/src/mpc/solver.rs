use serde::{Deserialize, Serialize};

use super::problem::{Evaluation, Linearization, MpcProblem, Pose};
use super::qp::Qp;
use crate::sim::Control;

/// Residual below which a barrier row counts as satisfied.
const SLACK_TOL: f64 = 1e-6;
/// Linearized barrier rows are tightened by this much so that the
/// second-order error of a step does not leave the true residual negative.
const BACKOFF: f64 = 1e-3;
/// Points per axis of the constant-control lattice.
const LATTICE: usize = 9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolveStatus {
    /// Every barrier row holds to within 1e-6.
    Optimal,
    /// Some barrier row needed slack.
    SlackActive,
    /// No QP step succeeded; the best sampled sequence was returned.
    Degraded,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MpcSolution {
    pub controls: Vec<Control>,
    /// Predicted poses x_1..=x_h.
    pub states: Vec<Pose>,
    /// `barrier_values[i][k]`, k = 0..=h.
    pub barrier_values: Vec<Vec<f64>>,
    /// `slacks[i][k] = max(0, −(h_{k+1} − (1 − γ)·h_k))`.
    pub slacks: Vec<Vec<f64>>,
    pub cost: f64,
    pub merit: f64,
    pub sqp_iterations: usize,
    pub status: SolveStatus,
    /// Merit of the nominal before the first and after every accepted step.
    pub merit_history: Vec<f64>,
    /// Trajectory of the initial nominal, kept for debug dumps.
    pub nominal_states: Vec<Pose>,
}

impl MpcSolution {
    pub fn first_control(&self) -> Control {
        self.controls[0]
    }

    pub fn max_slack(&self) -> f64 {
        self.slacks.iter().flatten().fold(0.0, |a: f64, &b| a.max(b))
    }

    pub fn min_barrier(&self) -> Option<f64> {
        self.barrier_values.iter().flatten().copied().reduce(f64::min)
    }
}

/// The `9 × 9` constant-control sequences used to seed the solver and as its
/// fallback: v and w each take nine evenly spaced values across their bounds.
pub fn control_lattice(problem: &MpcProblem) -> Vec<Control> {
    let lin = |lo: f64, hi: f64, i: usize| lo + (hi - lo) * i as f64 / (LATTICE - 1) as f64;
    let mut out = Vec::with_capacity(LATTICE * LATTICE);
    for i in 0..LATTICE {
        for j in 0..LATTICE {
            out.push(Control::new(
                lin(problem.v_min, problem.v_max, i),
                lin(-problem.w_max, problem.w_max, j),
            ));
        }
    }
    out
}

/// Previous plan shifted by one step, padded with its last control and
/// resized to `horizon`.
pub(crate) fn shift_warm_start(previous: &[Control], horizon: usize) -> Vec<Control> {
    let tail = previous.get(1..).unwrap_or(&[]);
    let pad = tail.last().or(previous.last()).copied().unwrap_or(Control::ZERO);
    (0..horizon).map(|k| tail.get(k).copied().unwrap_or(pad)).collect()
}

fn flatten(u: &[Control]) -> Vec<f64> {
    u.iter().flat_map(|c| [c.v, c.w]).collect()
}

fn unflatten(x: &[f64]) -> Vec<Control> {
    x.chunks(2).map(|c| Control::new(c[0], c[1])).collect()
}

enum Phase {
    Hard,
    Slack,
}

/// Builds the QP over control perturbations δ. Barrier and state-box rows
/// that cannot become active inside the trust region are left out; in the
/// slack phase every kept row gets its own penalized slack.
fn build_qp(problem: &MpcProblem, lin: &Linearization, nominal: &[f64], radius: f64, phase: Phase) -> Qp {
    let nu = nominal.len();
    let reach = |g: &[f64]| radius * g.iter().map(|v| v.abs()).sum::<f64>();
    // (gradient, lower bound) pairs of `g·δ ≥ lower`.
    let mut rows: Vec<(Vec<f64>, f64)> = lin
        .barrier_rows
        .iter()
        .filter(|(g, r)| *r - reach(g) < BACKOFF)
        .map(|(g, r)| (g.clone(), BACKOFF - r))
        .collect();
    for (k, jac) in lin.position_jacobians.iter().enumerate().skip(1) {
        let p = lin.eval.states[k].position;
        for (axis, grad) in jac.iter().enumerate() {
            let (lo, hi) = (problem.state_min[axis], problem.state_max[axis]);
            let value = p[axis];
            if value - reach(grad) < lo {
                rows.push((grad.clone(), lo - value));
            }
            if value + reach(grad) > hi {
                rows.push((grad.iter().map(|g| -g).collect(), value - hi));
            }
        }
    }

    let n_slack = match phase {
        Phase::Hard => 0,
        Phase::Slack => rows.len(),
    };
    let n = nu + n_slack;
    let mut qp = Qp::new(n);
    for r in 0..nu {
        qp.hessian[r * n..r * n + nu].copy_from_slice(&lin.hessian[r * nu..(r + 1) * nu]);
        qp.hessian[r * n + r] += problem.solver.damping;
        qp.linear[r] = lin.gradient[r];
    }
    for j in nu..n {
        qp.hessian[j * n + j] = 2.0 * problem.weights.slack_penalty;
    }

    for (k, pair) in nominal.chunks(2).enumerate() {
        let (v, w) = (pair[0], pair[1]);
        qp.push_bounds(2 * k, (problem.v_min - v).max(-radius), (problem.v_max - v).min(radius));
        qp.push_bounds(2 * k + 1, (-problem.w_max - w).max(-radius), (problem.w_max - w).min(radius));
    }
    let mut row = vec![0.0; n];
    for (s, (grad, lower)) in rows.iter().enumerate() {
        row.fill(0.0);
        row[..nu].copy_from_slice(grad);
        if n_slack > 0 {
            row[nu + s] = 1.0;
        }
        qp.push(&row, *lower);
    }
    for j in nu..n {
        row.fill(0.0);
        row[j] = 1.0;
        qp.push(&row, 0.0);
    }
    qp
}

fn feasible(e: &Evaluation) -> bool {
    e.max_violation < SLACK_TOL
}

/// Once a barrier-feasible nominal is found, only feasible candidates are
/// accepted; before that, any merit decrease is.
fn improves(trial: &Evaluation, current: &Evaluation) -> bool {
    trial.merit < current.merit && (feasible(trial) || !feasible(current))
}

fn solve_step(problem: &MpcProblem, lin: &Linearization, nominal: &[f64], radius: f64) -> Option<Vec<f64>> {
    let nu = nominal.len();
    [Phase::Hard, Phase::Slack]
        .into_iter()
        .find_map(|phase| build_qp(problem, lin, nominal, radius, phase).solve().ok())
        .map(|sol| sol.x[..nu].to_vec())
}

/// Solves the MPC problem by sequential convexification.
///
/// The initial nominal is the best of the shifted warm start and the
/// constant lattice sequences, barrier-feasible ones first. Each iteration linearizes dynamics and
/// barrier residuals about the nominal, solves a convex QP for the control
/// perturbation inside a trust region, and accepts the step only if the
/// nonlinear merit (cost plus squared barrier violation penalty) decreases
/// without losing barrier feasibility.
pub fn solve_mpc(problem: &MpcProblem, warm_start: Option<&MpcSolution>) -> MpcSolution {
    let h = problem.horizon;
    let mut nominal: Vec<Control> = Vec::new();
    let mut best: Option<Evaluation> = None;
    let mut consider = |u: Vec<Control>| {
        let e = problem.evaluate(&u);
        let key = |e: &Evaluation| (!feasible(e), e.merit);
        if best.as_ref().map_or(true, |b| key(&e) < key(b)) {
            best = Some(e);
            nominal = u;
        }
    };
    if let Some(ws) = warm_start {
        let shifted: Vec<Control> = shift_warm_start(&ws.controls, h)
            .into_iter()
            .map(|u| problem.clamp_control(u))
            .collect();
        consider(shifted);
    }
    for u in control_lattice(problem) {
        consider(vec![u; h]);
    }
    let mut eval = best.expect("lattice is non-empty");
    let nominal_states = eval.states.clone();

    let mut radius = problem.solver.trust_region;
    let mut merit_history = vec![eval.merit];
    let mut accepted = 0usize;
    let mut qp_failed = false;
    let mut iterations = 0usize;
    let mut x = flatten(&nominal);
    while iterations < problem.solver.max_sqp_iterations {
        iterations += 1;
        let lin = problem.linearize(&unflatten(&x));
        let Some(delta) = solve_step(problem, &lin, &x, radius) else {
            qp_failed = true;
            break;
        };
        let step = delta.iter().map(|d| d * d).sum::<f64>().sqrt();
        let candidate: Vec<f64> = x.iter().zip(&delta).map(|(a, d)| a + d).collect();
        let candidate_u: Vec<Control> = unflatten(&candidate).into_iter().map(|u| problem.clamp_control(u)).collect();
        let trial = problem.evaluate(&candidate_u);
        if improves(&trial, &eval) {
            x = flatten(&candidate_u);
            eval = trial;
            merit_history.push(eval.merit);
            accepted += 1;
        } else {
            radius *= problem.solver.trust_shrink;
        }
        if step < problem.solver.tolerance {
            break;
        }
    }

    let slacks: Vec<Vec<f64>> = eval
        .residual
        .iter()
        .map(|rs| rs.iter().map(|r| (-r).max(0.0)).collect())
        .collect();
    let max_slack = slacks.iter().flatten().fold(0.0f64, |a, &b| a.max(b));
    let status = if qp_failed && accepted == 0 {
        SolveStatus::Degraded
    } else if max_slack < SLACK_TOL {
        SolveStatus::Optimal
    } else {
        SolveStatus::SlackActive
    };
    MpcSolution {
        controls: unflatten(&x),
        states: eval.states[1..].to_vec(),
        barrier_values: eval.barrier,
        slacks,
        cost: eval.cost,
        merit: eval.merit,
        sqp_iterations: iterations,
        status,
        merit_history,
        nominal_states,
    }
}

#[cfg(test)]
mod tests {
    use glam::DVec2;
    use proptest::prelude::*;

    use super::*;
    use crate::config::SimConfig;
    use crate::mpc::{build_mpc, MpcSettings, PlannerPedestrian};
    use crate::sim::RobotState;

    fn robot(pos: DVec2, heading: f64, goal: DVec2) -> RobotState {
        RobotState {
            position: pos,
            heading,
            velocity: DVec2::ZERO,
            goal,
            v_ref: 1.0,
            radius: 0.3,
        }
    }

    fn ped(pos: DVec2, vel: DVec2, p: f64) -> PlannerPedestrian {
        PlannerPedestrian {
            id: 0,
            position: pos,
            velocity: vel,
            radius: 0.3,
            coop_prob: p,
            label: (p >= 0.5) as u8,
        }
    }

    fn check_dtcbf(problem: &MpcProblem, sol: &MpcSolution) {
        let gamma = problem.margins.gamma;
        for hs in &sol.barrier_values {
            for k in 0..problem.horizon {
                assert!(hs[k + 1] - hs[k] >= -gamma * hs[k] - 1e-6, "row {k}: {hs:?}");
            }
            if hs[0] >= 0.0 {
                for (k, &v) in hs.iter().enumerate() {
                    assert!(v >= (1.0 - gamma).powi(k as i32) * hs[0] - 1e-5);
                }
            }
        }
    }

    #[test]
    fn lattice_spans_bounds() {
        let cfg = SimConfig::default();
        let p = build_mpc(&robot(DVec2::ZERO, 0.0, DVec2::X), &[], 2, &MpcSettings::default(), &cfg);
        let l = control_lattice(&p);
        assert_eq!(l.len(), 81);
        assert_eq!(l[0], Control::new(-0.5, -1.0));
        assert_eq!(l[80], Control::new(1.0, 1.0));
        assert_eq!(l[40], Control::new(0.25, 0.0));
    }

    #[test]
    fn warm_start_shift() {
        let prev = [Control::new(1.0, 0.0), Control::new(0.5, 0.1), Control::new(0.2, 0.3)];
        assert_eq!(
            shift_warm_start(&prev, 4),
            vec![prev[1], prev[2], prev[2], prev[2]]
        );
        assert_eq!(shift_warm_start(&prev, 1), vec![prev[1]]);
        assert_eq!(shift_warm_start(&prev[..1], 2), vec![prev[0]; 2]);
    }

    #[test]
    fn straight_to_goal_beats_lattice() {
        let cfg = SimConfig::default();
        let r = robot(DVec2::ZERO, 0.0, DVec2::new(2.0, 0.0));
        let p = build_mpc(&r, &[], 8, &MpcSettings::default(), &cfg);
        let sol = solve_mpc(&p, None);
        let u0 = sol.first_control();
        assert!(u0.v > 0.5 * cfg.v_max, "{u0:?}");
        assert!(u0.w.abs() < 0.1);
        let end = sol.states.last().unwrap().position;
        assert!(end.distance(r.goal) < r.distance_to_goal());
        // Oracle: brute force over constant lattice sequences.
        let best = control_lattice(&p)
            .into_iter()
            .map(|u| p.evaluate(&vec![u; 8]).cost)
            .fold(f64::INFINITY, f64::min);
        assert!(sol.cost <= best + 1e-12);
        assert_eq!(sol.status, SolveStatus::Optimal);
    }

    #[test]
    fn blocking_pedestrian_barrier_holds() {
        let cfg = SimConfig::default();
        let r = robot(DVec2::ZERO, 0.0, DVec2::new(5.0, 0.0));
        // A non-cooperative pedestrian sitting on the straight path.
        let peds = [ped(DVec2::new(1.6, 0.05), DVec2::ZERO, 0.1)];
        let p = build_mpc(&r, &peds, 8, &MpcSettings::default(), &cfg);
        let straight = p.evaluate(&[Control::new(1.0, 0.0); 8]);
        assert!(straight.max_violation > 0.0);
        let sol = solve_mpc(&p, None);
        assert_eq!(sol.status, SolveStatus::Optimal, "{sol:?}");
        check_dtcbf(&p, &sol);
    }

    #[test]
    fn merit_history_monotone_and_deterministic() {
        let cfg = SimConfig::default();
        let r = robot(DVec2::new(-1.0, 0.3), 0.2, DVec2::new(4.0, -1.0));
        let peds = [
            ped(DVec2::new(0.5, 0.0), DVec2::new(-0.5, 0.0), 0.8),
            ped(DVec2::new(1.0, -1.2), DVec2::new(0.0, 0.5), 0.2),
        ];
        let p = build_mpc(&r, &peds, 6, &MpcSettings::default(), &cfg);
        let a = solve_mpc(&p, None);
        for w in a.merit_history.windows(2) {
            assert!(w[1] < w[0]);
        }
        let b = solve_mpc(&p, None);
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        let c = solve_mpc(&p, Some(&a));
        let d = solve_mpc(&p, Some(&a));
        assert_eq!(serde_json::to_string(&c).unwrap(), serde_json::to_string(&d).unwrap());
    }

    /// Lowest cost over barrier-feasible controls of a 41 × 41 grid (lowest
    /// merit if none is feasible), whether any was feasible, and the largest
    /// cost change between grid neighbours.
    fn grid_oracle(p: &MpcProblem) -> (f64, bool, f64) {
        let n = 41;
        let at = |i: usize, j: usize| {
            let v = p.v_min + (p.v_max - p.v_min) * i as f64 / (n - 1) as f64;
            let w = -p.w_max + 2.0 * p.w_max * j as f64 / (n - 1) as f64;
            p.evaluate(&[Control::new(v, w)])
        };
        let grid: Vec<Vec<_>> = (0..n).map(|i| (0..n).map(|j| at(i, j)).collect()).collect();
        let all = || grid.iter().flatten();
        let feasible = all().filter(|e| e.max_violation <= 1e-6).map(|e| e.cost).fold(f64::INFINITY, f64::min);
        let (best, any) = if feasible.is_finite() {
            (feasible, true)
        } else {
            (all().map(|e| e.merit).fold(f64::INFINITY, f64::min), false)
        };
        let mut resolution: f64 = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i + 1 < n {
                    resolution = resolution.max((grid[i + 1][j].cost - grid[i][j].cost).abs());
                }
                if j + 1 < n {
                    resolution = resolution.max((grid[i][j + 1].cost - grid[i][j].cost).abs());
                }
            }
        }
        (best, any, resolution)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(50))]
        #[test]
        fn single_step_matches_grid(
            ang in -3.1f64..3.1, dist in 1.5f64..6.0,
            heading in -3.1f64..3.1, gx in -5.0f64..5.0, gy in -5.0f64..5.0,
            vx in -1.0f64..1.0, vy in -1.0f64..1.0, prob in 0.0f64..1.0,
        ) {
            let cfg = SimConfig::default();
            let r = robot(DVec2::ZERO, heading, DVec2::new(gx, gy));
            let peds = [ped(DVec2::from_angle(ang) * dist, DVec2::new(vx, vy), prob)];
            let p = build_mpc(&r, &peds, 1, &MpcSettings::default(), &cfg);
            let sol = solve_mpc(&p, None);
            let (best, any_feasible, res) = grid_oracle(&p);
            let ours = if any_feasible {
                prop_assert_eq!(sol.status, SolveStatus::Optimal);
                sol.cost
            } else {
                sol.merit
            };
            prop_assert!(ours <= best + res, "{} vs {} (+{})", ours, best, res);
        }
    }
}
