use glam::DVec2;
use serde::{Deserialize, Serialize};

use super::{barrier_value, social_cost, MpcSettings, SafetyMargins, SolverSettings, MpcWeights};
use crate::config::SimConfig;
use crate::sim::{wrap_angle, Control, RobotState};

/// Planar robot pose.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub position: DVec2,
    pub heading: f64,
}

/// A pedestrian as seen by the planner (world frame).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlannerPedestrian {
    pub id: u32,
    pub position: DVec2,
    pub velocity: DVec2,
    pub radius: f64,
    /// Cooperation probability, weights the social cost.
    pub coop_prob: f64,
    /// Thresholded label, selects the barrier margin.
    pub label: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MpcProblem {
    pub initial: Pose,
    pub goal: DVec2,
    pub goal_heading: f64,
    pub horizon: usize,
    pub pedestrians: Vec<PlannerPedestrian>,
    /// `projections[i][k]` = position of pedestrian i at step k, k = 0..=h.
    pub projections: Vec<Vec<DVec2>>,
    pub robot_radius: f64,
    pub v_min: f64,
    pub v_max: f64,
    pub w_max: f64,
    pub state_min: DVec2,
    pub state_max: DVec2,
    pub margins: SafetyMargins,
    pub weights: MpcWeights,
    pub solver: SolverSettings,
    pub dt: f64,
}

/// Assembles the finite-horizon problem from the robot state and the
/// pedestrians currently perceived. The goal heading is the bearing from the
/// robot to its goal.
pub fn build_mpc(
    robot: &RobotState,
    pedestrians: &[PlannerPedestrian],
    horizon: usize,
    settings: &MpcSettings,
    config: &SimConfig,
) -> MpcProblem {
    assert!(horizon >= 1, "horizon must be at least 1");
    let to_goal = robot.goal - robot.position;
    let goal_heading = if to_goal.length() > 1e-6 {
        to_goal.to_angle()
    } else {
        robot.heading
    };
    let projections = pedestrians
        .iter()
        .map(|p| {
            (0..=horizon)
                .map(|k| p.position + p.velocity * (k as f64 * config.dt))
                .collect()
        })
        .collect();
    let extent = config.arena_spawn_radius + settings.solver.arena_padding;
    MpcProblem {
        initial: Pose {
            position: robot.position,
            heading: robot.heading,
        },
        goal: robot.goal,
        goal_heading,
        horizon,
        pedestrians: pedestrians.to_vec(),
        projections,
        robot_radius: robot.radius,
        v_min: config.v_min,
        v_max: config.v_max,
        w_max: config.w_max,
        state_min: DVec2::splat(-extent),
        state_max: DVec2::splat(extent),
        margins: settings.margins,
        weights: settings.weights,
        solver: settings.solver,
        dt: config.dt,
    }
}

/// Cost, trajectory and barrier data of one control sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    /// Poses x_0..=x_h.
    pub states: Vec<Pose>,
    /// Objective without the slack penalty.
    pub cost: f64,
    /// `barrier[i][k]`, k = 0..=h.
    pub barrier: Vec<Vec<f64>>,
    /// `residual[i][k] = h_{k+1} − (1 − γ)·h_k`, k = 0..h.
    pub residual: Vec<Vec<f64>>,
    /// Cost plus the quadratic penalty on barrier violations.
    pub merit: f64,
    pub max_violation: f64,
}

/// First-order data around a nominal control sequence.
pub(crate) struct Linearization {
    pub eval: Evaluation,
    /// ∇ cost over the 2h controls.
    pub gradient: Vec<f64>,
    /// Gauss–Newton Hessian, row-major 2h × 2h.
    pub hessian: Vec<f64>,
    /// (∇residual, residual) per (i, k).
    pub barrier_rows: Vec<(Vec<f64>, f64)>,
    /// Position sensitivities ∂p_k/∂U, rows (x, y) each 2h long, k = 0..=h.
    pub position_jacobians: Vec<[Vec<f64>; 2]>,
}

impl MpcProblem {
    pub fn n_controls(&self) -> usize {
        2 * self.horizon
    }

    pub fn n_barrier_constraints(&self) -> usize {
        self.pedestrians.len() * self.horizon
    }

    pub fn n_stage_costs(&self) -> usize {
        self.horizon
    }

    pub fn clamp_control(&self, u: Control) -> Control {
        Control {
            v: u.v.clamp(self.v_min, self.v_max),
            w: u.w.clamp(-self.w_max, self.w_max),
        }
    }

    fn barrier_at(&self, i: usize, k: usize, position: DVec2) -> f64 {
        let p = &self.pedestrians[i];
        barrier_value(
            position,
            self.projections[i][k],
            self.robot_radius,
            p.radius,
            p.label,
            &self.margins,
        )
    }

    fn tracking_error(&self, pose: &Pose) -> [f64; 3] {
        [
            pose.position.x - self.goal.x,
            pose.position.y - self.goal.y,
            wrap_angle(pose.heading - self.goal_heading),
        ]
    }

    pub fn rollout(&self, controls: &[Control]) -> Vec<Pose> {
        let mut states = Vec::with_capacity(controls.len() + 1);
        let mut pose = self.initial;
        states.push(pose);
        for u in controls {
            let dir = DVec2::new(pose.heading.cos(), pose.heading.sin());
            pose = Pose {
                position: pose.position + dir * (u.v * self.dt),
                heading: wrap_angle(pose.heading + u.w * self.dt),
            };
            states.push(pose);
        }
        states
    }

    /// Evaluates the objective and barrier residuals of `controls`.
    pub fn evaluate(&self, controls: &[Control]) -> Evaluation {
        assert_eq!(controls.len(), self.horizon);
        let states = self.rollout(controls);
        let w = &self.weights;
        let mut cost = 0.0;
        for (k, u) in controls.iter().enumerate() {
            let e = self.tracking_error(&states[k]);
            cost += quad3(&w.q, &e);
            cost += quad2(&w.r, &[u.v, u.w]);
            for (i, p) in self.pedestrians.iter().enumerate() {
                cost += social_cost(states[k].position, self.projections[i][k], p.coop_prob, w);
            }
        }
        cost += quad3(&w.q_terminal, &self.tracking_error(&states[self.horizon]));

        let gamma = self.margins.gamma;
        let mut barrier = Vec::with_capacity(self.pedestrians.len());
        let mut residual = Vec::with_capacity(self.pedestrians.len());
        let mut penalty = 0.0;
        let mut max_violation: f64 = 0.0;
        for i in 0..self.pedestrians.len() {
            let hs: Vec<f64> = (0..=self.horizon).map(|k| self.barrier_at(i, k, states[k].position)).collect();
            let rs: Vec<f64> = (0..self.horizon).map(|k| hs[k + 1] - (1.0 - gamma) * hs[k]).collect();
            for &r in &rs {
                if r < 0.0 {
                    penalty += r * r;
                    max_violation = max_violation.max(-r);
                }
            }
            barrier.push(hs);
            residual.push(rs);
        }
        Evaluation {
            states,
            merit: cost + w.slack_penalty * penalty,
            cost,
            barrier,
            residual,
            max_violation,
        }
    }

    pub(crate) fn linearize(&self, controls: &[Control]) -> Linearization {
        let h = self.horizon;
        let nu = 2 * h;
        let eval = self.evaluate(controls);
        let states = &eval.states;
        let w = &self.weights;
        let dt = self.dt;

        // Sensitivities S_k = ∂x_k/∂U, stored as three rows of length nu.
        let mut sens: Vec<[Vec<f64>; 3]> = Vec::with_capacity(h + 1);
        sens.push([vec![0.0; nu], vec![0.0; nu], vec![0.0; nu]]);
        for k in 0..h {
            let th = states[k].heading;
            let (s, c) = th.sin_cos();
            let v = controls[k].v;
            let prev = &sens[k];
            let mut row_x = prev[0].clone();
            let mut row_y = prev[1].clone();
            let mut row_t = prev[2].clone();
            for j in 0..nu {
                row_x[j] += -dt * v * s * prev[2][j];
                row_y[j] += dt * v * c * prev[2][j];
            }
            row_x[2 * k] += dt * c;
            row_y[2 * k] += dt * s;
            row_t[2 * k + 1] += dt;
            sens.push([row_x, row_y, row_t]);
        }

        let mut gradient = vec![0.0; nu];
        let mut hessian = vec![0.0; nu * nu];

        let mut add_tracking = |q: &[[f64; 3]; 3], e: &[f64; 3], s: &[Vec<f64>; 3]| {
            // cost eᵀQe: gradient 2 eᵀ Q S, GN Hessian 2 Sᵀ Q S.
            let qe = [
                q[0][0] * e[0] + q[0][1] * e[1] + q[0][2] * e[2],
                q[1][0] * e[0] + q[1][1] * e[1] + q[1][2] * e[2],
                q[2][0] * e[0] + q[2][1] * e[1] + q[2][2] * e[2],
            ];
            let mut qs = vec![[0.0; 3]; nu];
            for j in 0..nu {
                for a in 0..3 {
                    gradient[j] += 2.0 * qe[a] * s[a][j];
                    qs[j][a] = q[a][0] * s[0][j] + q[a][1] * s[1][j] + q[a][2] * s[2][j];
                }
            }
            for r in 0..nu {
                if s[0][r] == 0.0 && s[1][r] == 0.0 && s[2][r] == 0.0 {
                    continue;
                }
                for c in 0..nu {
                    hessian[r * nu + c] += 2.0 * (s[0][r] * qs[c][0] + s[1][r] * qs[c][1] + s[2][r] * qs[c][2]);
                }
            }
        };
        for k in 1..h {
            add_tracking(&w.q, &self.tracking_error(&states[k]), &sens[k]);
        }
        add_tracking(&w.q_terminal, &self.tracking_error(&states[h]), &sens[h]);

        for (k, u) in controls.iter().enumerate() {
            let (a, b) = (2 * k, 2 * k + 1);
            gradient[a] += 2.0 * (w.r[0][0] * u.v + w.r[0][1] * u.w);
            gradient[b] += 2.0 * (w.r[1][0] * u.v + w.r[1][1] * u.w);
            hessian[a * nu + a] += 2.0 * w.r[0][0];
            hessian[a * nu + b] += 2.0 * w.r[0][1];
            hessian[b * nu + a] += 2.0 * w.r[1][0];
            hessian[b * nu + b] += 2.0 * w.r[1][1];
        }

        // Social cost: exact gradient, positive part of the radial curvature.
        for k in 1..h {
            let p = states[k].position;
            let s = &sens[k];
            for (i, ped) in self.pedestrians.iter().enumerate() {
                let r = p - self.projections[i][k];
                let d2 = r.length_squared();
                let mut g = DVec2::ZERO;
                let mut curvature = 0.0;
                for (weight, sigma) in [(ped.coop_prob, w.sigma_coop), (1.0 - ped.coop_prob, w.sigma_noncoop)] {
                    if weight == 0.0 {
                        continue;
                    }
                    let s2 = sigma * sigma;
                    let phi = w.eta * weight * (-d2 / s2).exp();
                    g += r * (-2.0 * phi / s2);
                    curvature += phi * (4.0 * d2 / (s2 * s2) - 2.0 / s2);
                }
                for j in 0..nu {
                    gradient[j] += g.x * s[0][j] + g.y * s[1][j];
                }
                if curvature > 0.0 && d2 > 0.0 {
                    let n = r / d2.sqrt();
                    let proj: Vec<f64> = (0..nu).map(|j| n.x * s[0][j] + n.y * s[1][j]).collect();
                    for a in 0..nu {
                        if proj[a] == 0.0 {
                            continue;
                        }
                        for b in 0..nu {
                            hessian[a * nu + b] += curvature * proj[a] * proj[b];
                        }
                    }
                }
            }
        }

        let gamma = self.margins.gamma;
        let mut barrier_rows = Vec::with_capacity(self.n_barrier_constraints());
        for i in 0..self.pedestrians.len() {
            // ∇h_k wrt U = n_kᵀ S_k[pos], n_k the unit vector away from the pedestrian.
            let grad_h = |k: usize| -> Vec<f64> {
                let r = states[k].position - self.projections[i][k];
                let d = r.length();
                if k == 0 || d < 1e-12 {
                    return vec![0.0; nu];
                }
                let n = r / d;
                (0..nu).map(|j| n.x * sens[k][0][j] + n.y * sens[k][1][j]).collect()
            };
            let mut prev = grad_h(0);
            for k in 0..h {
                let next = grad_h(k + 1);
                let row: Vec<f64> = (0..nu).map(|j| next[j] - (1.0 - gamma) * prev[j]).collect();
                barrier_rows.push((row, eval.residual[i][k]));
                prev = next;
            }
        }

        let position_jacobians = sens.into_iter().map(|[x, y, _]| [x, y]).collect();
        Linearization {
            eval,
            gradient,
            hessian,
            barrier_rows,
            position_jacobians,
        }
    }
}

fn quad3(q: &[[f64; 3]; 3], e: &[f64; 3]) -> f64 {
    let mut s = 0.0;
    for a in 0..3 {
        for b in 0..3 {
            s += e[a] * q[a][b] * e[b];
        }
    }
    s
}

fn quad2(r: &[[f64; 2]; 2], u: &[f64; 2]) -> f64 {
    u[0] * (r[0][0] * u[0] + r[0][1] * u[1]) + u[1] * (r[1][0] * u[0] + r[1][1] * u[1])
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn robot_at(pos: DVec2, heading: f64, goal: DVec2) -> RobotState {
        RobotState {
            position: pos,
            heading,
            velocity: DVec2::ZERO,
            goal,
            v_ref: 1.0,
            radius: 0.3,
        }
    }

    fn ped(id: u32, pos: DVec2, vel: DVec2, p: f64) -> PlannerPedestrian {
        PlannerPedestrian {
            id,
            position: pos,
            velocity: vel,
            radius: 0.3,
            coop_prob: p,
            label: (p >= 0.5) as u8,
        }
    }

    #[test]
    fn constraint_counts() {
        let cfg = SimConfig::default();
        let s = MpcSettings::default();
        let robot = robot_at(DVec2::ZERO, 0.0, DVec2::new(5.0, 0.0));
        let p0 = build_mpc(&robot, &[], 3, &s, &cfg);
        assert_eq!(p0.n_barrier_constraints(), 0);
        assert_eq!(p0.n_stage_costs(), 3);
        let peds = [ped(0, DVec2::new(3.0, 1.0), DVec2::ZERO, 0.2), ped(1, DVec2::new(3.0, -1.0), DVec2::ZERO, 0.9)];
        let p2 = build_mpc(&robot, &peds, 5, &s, &cfg);
        assert_eq!(p2.n_barrier_constraints(), 10);
        let lin = p2.linearize(&[Control::ZERO; 5]);
        assert_eq!(lin.barrier_rows.len(), 10);
    }

    #[test]
    fn zero_cost_at_goal() {
        let cfg = SimConfig::default();
        let robot = robot_at(DVec2::new(1.0, 1.0), 0.4, DVec2::new(1.0, 1.0));
        let p = build_mpc(&robot, &[], 4, &MpcSettings::default(), &cfg);
        let e = p.evaluate(&[Control::ZERO; 4]);
        assert_eq!(e.cost, 0.0);
        assert_eq!(e.merit, 0.0);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let cfg = SimConfig::default();
        let robot = robot_at(DVec2::new(-2.0, 0.5), 0.3, DVec2::new(4.0, 0.0));
        let peds = [
            ped(0, DVec2::new(0.0, 0.8), DVec2::new(-0.3, 0.0), 0.7),
            ped(1, DVec2::new(1.0, -0.5), DVec2::new(0.0, 0.4), 0.1),
        ];
        let p = build_mpc(&robot, &peds, 4, &MpcSettings::default(), &cfg);
        let u: Vec<Control> = (0..4).map(|k| Control::new(0.6 + 0.05 * k as f64, 0.2 - 0.1 * k as f64)).collect();
        let lin = p.linearize(&u);
        let flat = |u: &[Control]| -> Vec<f64> { u.iter().flat_map(|c| [c.v, c.w]).collect() };
        let unflat = |x: &[f64]| -> Vec<Control> { x.chunks(2).map(|c| Control::new(c[0], c[1])).collect() };
        let x = flat(&u);
        let eps = 1e-6;
        for j in 0..x.len() {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[j] += eps;
            xm[j] -= eps;
            let ep = p.evaluate(&unflat(&xp));
            let em = p.evaluate(&unflat(&xm));
            let fd = (ep.cost - em.cost) / (2.0 * eps);
            assert!((fd - lin.gradient[j]).abs() < 1e-5 * (1.0 + fd.abs()), "cost j={j}: fd {fd} vs {}", lin.gradient[j]);
            for (row, ((grad, _), (i, k))) in lin
                .barrier_rows
                .iter()
                .zip((0..2).flat_map(|i| (0..4).map(move |k| (i, k))))
                .enumerate()
            {
                let fd = (ep.residual[i][k] - em.residual[i][k]) / (2.0 * eps);
                assert!((fd - grad[j]).abs() < 1e-6, "row {row} j={j}: fd {fd} vs {}", grad[j]);
            }
        }
    }
}
