//! Dense strictly convex QP solver (Goldfarb–Idnani dual active set).
//!
//! Solves
//!
//! ```text
//!     minimize    ½ xᵀ G x + cᵀ x
//!     subject to  aⱼᵀ x ≥ bⱼ      j = 0..m
//! ```
//!
//! with `G` symmetric positive definite. The dual method starts from the
//! unconstrained minimizer and adds the most violated constraint each
//! iteration, so no feasible starting point is required and infeasibility is
//! detected rather than assumed away. Matrices are row-major `Vec<f64>`.
//!
//! The factorization keeps `J = L⁻ᵀ Q` (with `G = L Lᵀ`) and the upper
//! triangular `R` of the active constraint normals in the `J` basis, updated
//! with Givens rotations on constraint addition and removal.

use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum QpError {
    #[error("hessian is not positive definite")]
    NotPositiveDefinite,
    #[error("constraints are infeasible")]
    Infeasible,
    #[error("iteration limit reached")]
    IterationLimit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub x: Vec<f64>,
    pub objective: f64,
    /// Multiplier per constraint (zero for inactive ones).
    pub multipliers: Vec<f64>,
    pub active: Vec<usize>,
    pub iterations: usize,
}

/// Inequality-constrained QP in row-major storage.
#[derive(Debug, Clone, Default)]
pub struct Qp {
    pub n: usize,
    pub hessian: Vec<f64>,
    pub linear: Vec<f64>,
    /// `m × n` constraint normals.
    pub a: Vec<f64>,
    pub b: Vec<f64>,
}

impl Qp {
    pub fn new(n: usize) -> Self {
        Self {
            n,
            hessian: vec![0.0; n * n],
            linear: vec![0.0; n],
            a: Vec::new(),
            b: Vec::new(),
        }
    }

    pub fn n_constraints(&self) -> usize {
        self.b.len()
    }

    /// Appends `rowᵀ x ≥ lower`.
    pub fn push(&mut self, row: &[f64], lower: f64) {
        debug_assert_eq!(row.len(), self.n);
        self.a.extend_from_slice(row);
        self.b.push(lower);
    }

    /// Appends `x[j] ≥ lower` and `x[j] ≤ upper`.
    pub fn push_bounds(&mut self, j: usize, lower: f64, upper: f64) {
        let start = self.a.len();
        self.a.resize(start + 2 * self.n, 0.0);
        self.a[start + j] = 1.0;
        self.a[start + self.n + j] = -1.0;
        self.b.push(lower);
        self.b.push(-upper);
    }

    pub fn row(&self, j: usize) -> &[f64] {
        &self.a[j * self.n..(j + 1) * self.n]
    }

    pub fn objective(&self, x: &[f64]) -> f64 {
        let n = self.n;
        let mut quad = 0.0;
        for i in 0..n {
            quad += x[i] * dot(&self.hessian[i * n..(i + 1) * n], x);
        }
        0.5 * quad + dot(&self.linear, x)
    }

    pub fn solve(&self) -> Result<QpSolution, QpError> {
        solve(self)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Lower Cholesky factor of a row-major SPD matrix.
fn cholesky(g: &[f64], n: usize) -> Result<Vec<f64>, QpError> {
    let mut l = vec![0.0; n * n];
    for j in 0..n {
        let mut diag = g[j * n + j];
        for k in 0..j {
            diag -= l[j * n + k] * l[j * n + k];
        }
        if !(diag > 0.0) || !diag.is_finite() {
            return Err(QpError::NotPositiveDefinite);
        }
        let ljj = diag.sqrt();
        l[j * n + j] = ljj;
        for i in j + 1..n {
            let mut s = g[i * n + j];
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            l[i * n + j] = s / ljj;
        }
    }
    Ok(l)
}

/// Givens rotation (c, s) with c·a + s·b = hypot(a, b), −s·a + c·b = 0.
fn givens(a: f64, b: f64) -> (f64, f64, f64) {
    let r = a.hypot(b);
    if r == 0.0 {
        (1.0, 0.0, 0.0)
    } else {
        (a / r, b / r, r)
    }
}

struct Factor {
    n: usize,
    /// Row-major n×n; column k of J is the k-th basis vector.
    j: Vec<f64>,
    /// Row-major n×n upper triangular, leading q×q block used.
    r: Vec<f64>,
    q: usize,
}

impl Factor {
    fn rotate_j_columns(&mut self, k1: usize, k2: usize, c: f64, s: f64) {
        let n = self.n;
        for row in 0..n {
            let a = self.j[row * n + k1];
            let b = self.j[row * n + k2];
            self.j[row * n + k1] = c * a + s * b;
            self.j[row * n + k2] = -s * a + c * b;
        }
    }

    /// d = Jᵀ a.
    fn project(&self, a: &[f64], d: &mut [f64]) {
        let n = self.n;
        d.iter_mut().for_each(|v| *v = 0.0);
        for row in 0..n {
            let ar = a[row];
            if ar == 0.0 {
                continue;
            }
            let jr = &self.j[row * n..(row + 1) * n];
            for (dk, jk) in d.iter_mut().zip(jr) {
                *dk += jk * ar;
            }
        }
    }

    /// Adds the constraint whose projection is `d`; returns false when `d`
    /// is numerically dependent on the active set.
    fn add(&mut self, d: &mut [f64]) -> bool {
        let n = self.n;
        for k in (self.q + 1..n).rev() {
            if d[k] == 0.0 {
                continue;
            }
            let (c, s, r) = givens(d[k - 1], d[k]);
            d[k - 1] = r;
            d[k] = 0.0;
            self.rotate_j_columns(k - 1, k, c, s);
        }
        let q = self.q;
        if d[q].abs() <= f64::EPSILON * 1e3 * d.iter().map(|v| v.abs()).fold(0.0, f64::max).max(1.0) {
            return false;
        }
        for i in 0..=q {
            self.r[i * n + q] = d[i];
        }
        self.q += 1;
        true
    }

    /// Removes active column `l` and restores triangularity.
    fn drop(&mut self, l: usize) {
        let n = self.n;
        let q = self.q;
        for col in l..q - 1 {
            for row in 0..q {
                self.r[row * n + col] = self.r[row * n + col + 1];
            }
        }
        for row in 0..q {
            self.r[row * n + q - 1] = 0.0;
        }
        for k in l..q - 1 {
            let (c, s, rr) = givens(self.r[k * n + k], self.r[(k + 1) * n + k]);
            self.r[k * n + k] = rr;
            self.r[(k + 1) * n + k] = 0.0;
            for col in k + 1..q - 1 {
                let a = self.r[k * n + col];
                let b = self.r[(k + 1) * n + col];
                self.r[k * n + col] = c * a + s * b;
                self.r[(k + 1) * n + col] = -s * a + c * b;
            }
            self.rotate_j_columns(k, k + 1, c, s);
        }
        self.q -= 1;
    }

    /// Solves R[..q, ..q] r = d[..q].
    fn back_substitute(&self, d: &[f64], out: &mut [f64]) {
        let n = self.n;
        for i in (0..self.q).rev() {
            let mut s = d[i];
            for k in i + 1..self.q {
                s -= self.r[i * n + k] * out[k];
            }
            out[i] = s / self.r[i * n + i];
        }
    }
}

fn solve(qp: &Qp) -> Result<QpSolution, QpError> {
    let n = qp.n;
    let m = qp.n_constraints();
    let l = cholesky(&qp.hessian, n)?;

    // J = L⁻ᵀ: solve Lᵀ J = I column by column (J is upper triangular).
    let mut j = vec![0.0; n * n];
    for col in 0..n {
        for i in (0..=col).rev() {
            let mut s = if i == col { 1.0 } else { 0.0 };
            for k in i + 1..=col {
                s -= l[k * n + i] * j[k * n + col];
            }
            j[i * n + col] = s / l[i * n + i];
        }
    }

    // Unconstrained minimizer x = −G⁻¹c = −J Jᵀ c.
    let mut x = vec![0.0; n];
    {
        let mut jtc = vec![0.0; n];
        for (row, &c) in qp.linear.iter().enumerate() {
            for k in 0..n {
                jtc[k] += j[row * n + k] * c;
            }
        }
        for row in 0..n {
            x[row] = -dot(&j[row * n..(row + 1) * n], &jtc);
        }
    }

    let mut f = Factor {
        n,
        j,
        r: vec![0.0; n * n],
        q: 0,
    };
    let mut active: Vec<usize> = Vec::new();
    let mut u: Vec<f64> = Vec::new();
    let mut d = vec![0.0; n];
    let mut z = vec![0.0; n];
    let mut rvec = vec![0.0; n];
    let mut is_active = vec![false; m];

    let scale: Vec<f64> = (0..m).map(|c| dot(qp.row(c), qp.row(c)).sqrt().max(1e-300)).collect();
    let tol = 1e-10;
    let max_iter = 20 * (n + m) + 50;
    let mut iterations = 0;

    'outer: loop {
        // Most violated constraint, measured in normalized distance.
        let mut p = None;
        let mut worst = -tol;
        for c in 0..m {
            if is_active[c] {
                continue;
            }
            let slack = (dot(qp.row(c), &x) - qp.b[c]) / scale[c];
            if slack < worst {
                worst = slack;
                p = Some(c);
            }
        }
        let Some(p) = p else { break };
        let ap = qp.row(p);
        let mut u_plus = 0.0;

        loop {
            iterations += 1;
            if iterations > max_iter {
                return Err(QpError::IterationLimit);
            }
            f.project(ap, &mut d);
            let q = f.q;
            // Primal step direction in the null space of the active set.
            for row in 0..n {
                z[row] = dot(&f.j[row * n + q..(row + 1) * n], &d[q..]);
            }
            f.back_substitute(&d, &mut rvec);

            let mut t1 = f64::INFINITY;
            let mut drop_at = None;
            for k in 0..q {
                if rvec[k] > 1e-14 {
                    let t = u[k] / rvec[k];
                    if t < t1 {
                        t1 = t;
                        drop_at = Some(k);
                    }
                }
            }
            let zz: f64 = d[q..].iter().map(|v| v * v).sum();
            let violation = dot(ap, &x) - qp.b[p];
            let t2 = if zz > 1e-20 * scale[p] * scale[p] {
                -violation / zz
            } else {
                f64::INFINITY
            };
            let t = t1.min(t2);
            if !t.is_finite() {
                return Err(QpError::Infeasible);
            }

            if t2.is_infinite() {
                // Dual-only step.
                for k in 0..q {
                    u[k] -= t * rvec[k];
                }
                u_plus += t;
                let k = drop_at.expect("finite t1 has an index");
                is_active[active[k]] = false;
                active.remove(k);
                u.remove(k);
                f.drop(k);
                continue;
            }

            for row in 0..n {
                x[row] += t * z[row];
            }
            for k in 0..q {
                u[k] -= t * rvec[k];
            }
            u_plus += t;

            if t2 <= t1 {
                if !f.add(&mut d) {
                    return Err(QpError::Infeasible);
                }
                active.push(p);
                u.push(u_plus);
                is_active[p] = true;
                continue 'outer;
            }
            let k = drop_at.expect("partial step has an index");
            is_active[active[k]] = false;
            active.remove(k);
            u.remove(k);
            f.drop(k);
        }
    }

    let mut multipliers = vec![0.0; m];
    for (k, &c) in active.iter().enumerate() {
        multipliers[c] = u[k];
    }
    Ok(QpSolution {
        objective: qp.objective(&x),
        x,
        multipliers,
        active,
        iterations,
    })
}
