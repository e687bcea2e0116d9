//! Dense convex quadratic programs.
//!
//! Solves
//!
//! ```text
//!     minimize     1/2 z' H z + q' z
//!     subject to   A z <= b
//!                  lower <= z <= upper
//! ```
//!
//! with the dual active-set method of Goldfarb and Idnani. The method starts
//! from the unconstrained minimizer and adds violated constraints one at a
//! time, keeping the factorization `J' N = [R; 0]` (with `J J' = H^-1`)
//! up to date through Givens rotations. Problems here are small (a dozen
//! variables, a few dozen rows), so everything is dense.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

/// Diagonal value substituted for exactly-zero Hessian diagonal entries.
pub const EPS_REG: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QpError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("problem has no decision variables")]
    Empty,
    #[error("non-finite entry in {0}")]
    NonFinite(&'static str),
    #[error("hessian is not positive definite after regularization")]
    NotConvex,
}

/// Symmetric matrix stored as a packed upper triangle.
///
/// `get(i, j)` and `get(j, i)` read the same storage slot, so symmetry holds
/// exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix {
    order: usize,
    packed: Vec<f64>,
}

impl SymMatrix {
    pub fn zeros(order: usize) -> Self {
        Self {
            order,
            packed: vec![0.0; order * (order + 1) / 2],
        }
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        let mut m = Self::zeros(diag.len());
        for (i, &d) in diag.iter().enumerate() {
            m.set(i, i, d);
        }
        m
    }

    /// Builds from a row-major square matrix, reading only the upper triangle.
    pub fn from_upper(order: usize, rows: &[f64]) -> Self {
        assert_eq!(rows.len(), order * order);
        let mut m = Self::zeros(order);
        for i in 0..order {
            for j in i..order {
                m.set(i, j, rows[i * order + j]);
            }
        }
        m
    }

    fn slot(i: usize, j: usize) -> usize {
        let (i, j) = if i <= j { (i, j) } else { (j, i) };
        j * (j + 1) / 2 + i
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.packed[Self::slot(i, j)]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.packed[Self::slot(i, j)] = v;
    }

    pub fn scaled(&self, k: f64) -> Self {
        Self {
            order: self.order,
            packed: self.packed.iter().map(|v| v * k).collect(),
        }
    }

    pub fn to_dmatrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.order, self.order, |i, j| self.get(i, j))
    }

    pub fn mul_vec(&self, z: &[f64]) -> Vec<f64> {
        (0..self.order)
            .map(|i| (0..self.order).map(|j| self.get(i, j) * z[j]).sum())
            .collect()
    }

    pub fn quad_form(&self, z: &[f64]) -> f64 {
        dot(z, &self.mul_vec(z))
    }
}

/// Dense QP `min 1/2 z'Hz + q'z  s.t.  Az <= b, lower <= z <= upper`.
#[derive(Debug, Clone, PartialEq)]
pub struct QpProblem {
    pub hessian: SymMatrix,
    pub linear_cost: Vec<f64>,
    /// Row-major, `n_c x n_z`.
    pub ineq_matrix: Vec<f64>,
    pub ineq_rhs: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl QpProblem {
    /// Unconstrained problem. Zero diagonal entries of `hessian` are replaced
    /// by [`EPS_REG`].
    pub fn new(mut hessian: SymMatrix, linear_cost: Vec<f64>) -> Self {
        let n = hessian.order();
        for i in 0..n {
            if hessian.get(i, i) == 0.0 {
                hessian.set(i, i, EPS_REG);
            }
        }
        Self {
            hessian,
            linear_cost,
            ineq_matrix: Vec::new(),
            ineq_rhs: Vec::new(),
            lower: vec![f64::NEG_INFINITY; n],
            upper: vec![f64::INFINITY; n],
        }
    }

    pub fn with_inequalities(mut self, matrix: Vec<f64>, rhs: Vec<f64>) -> Self {
        self.ineq_matrix = matrix;
        self.ineq_rhs = rhs;
        self
    }

    pub fn with_bounds(mut self, lower: Vec<f64>, upper: Vec<f64>) -> Self {
        self.lower = lower;
        self.upper = upper;
        self
    }

    /// Appends one row `a . z <= b`.
    pub fn push_row(&mut self, a: &[f64], b: f64) {
        debug_assert_eq!(a.len(), self.num_vars());
        self.ineq_matrix.extend_from_slice(a);
        self.ineq_rhs.push(b);
    }

    pub fn num_vars(&self) -> usize {
        self.hessian.order()
    }

    pub fn num_rows(&self) -> usize {
        self.ineq_rhs.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let n = self.num_vars();
        &self.ineq_matrix[i * n..(i + 1) * n]
    }

    pub fn objective(&self, z: &[f64]) -> f64 {
        0.5 * self.hessian.quad_form(z) + dot(&self.linear_cost, z)
    }

    pub fn validate(&self) -> Result<(), QpError> {
        let n = self.num_vars();
        if n == 0 {
            return Err(QpError::Empty);
        }
        if self.linear_cost.len() != n {
            return Err(QpError::Dimension(format!(
                "linear_cost has {} entries, hessian order is {n}",
                self.linear_cost.len()
            )));
        }
        if self.ineq_matrix.len() != self.ineq_rhs.len() * n {
            return Err(QpError::Dimension(format!(
                "ineq_matrix has {} entries, expected {} rows x {n}",
                self.ineq_matrix.len(),
                self.ineq_rhs.len()
            )));
        }
        if self.lower.len() != n || self.upper.len() != n {
            return Err(QpError::Dimension("bound vectors must match hessian order".into()));
        }
        if self.hessian.packed.iter().any(|v| !v.is_finite()) {
            return Err(QpError::NonFinite("hessian"));
        }
        if self.linear_cost.iter().any(|v| !v.is_finite()) {
            return Err(QpError::NonFinite("linear_cost"));
        }
        if self.ineq_matrix.iter().any(|v| !v.is_finite()) {
            return Err(QpError::NonFinite("ineq_matrix"));
        }
        if self.ineq_rhs.iter().any(|v| v.is_nan()) {
            return Err(QpError::NonFinite("ineq_rhs"));
        }
        if self.lower.iter().chain(&self.upper).any(|v| v.is_nan()) {
            return Err(QpError::NonFinite("bounds"));
        }
        Ok(())
    }

    /// All constraints, bounds included, as rows `a . z <= b`. Bound rows
    /// follow the inequality rows: lower bounds first, then upper bounds.
    /// Infinite bounds produce rows with an infinite right-hand side.
    fn stacked_rows(&self) -> (Vec<f64>, Vec<f64>) {
        let n = self.num_vars();
        let m = self.num_rows();
        let mut a = Vec::with_capacity((m + 2 * n) * n);
        let mut b = Vec::with_capacity(m + 2 * n);
        a.extend_from_slice(&self.ineq_matrix);
        b.extend_from_slice(&self.ineq_rhs);
        for j in 0..n {
            let mut row = vec![0.0; n];
            row[j] = -1.0;
            a.extend_from_slice(&row);
            b.push(-self.lower[j]);
        }
        for j in 0..n {
            let mut row = vec![0.0; n];
            row[j] = 1.0;
            a.extend_from_slice(&row);
            b.push(self.upper[j]);
        }
        (a, b)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QpSettings {
    /// Largest accepted constraint violation.
    pub tol_primal: f64,
    /// Largest accepted stationarity residual, relative to
    /// `max(1, |Hz|, |q|, |A' lambda|)`.
    pub tol_dual: f64,
    pub tol_obj: f64,
    pub max_iter: usize,
}

impl Default for QpSettings {
    fn default() -> Self {
        Self {
            tol_primal: 1e-6,
            tol_dual: 1e-6,
            tol_obj: 1e-5,
            max_iter: 20_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum QpStatus {
    Optimal,
    MaxIterations,
    Infeasible,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub z_star: Vec<f64>,
    pub objective: f64,
    pub status: QpStatus,
    pub iterations: usize,
    pub primal_residual: f64,
    pub dual_residual: f64,
    /// Multipliers for the inequality rows, then the lower bounds, then the
    /// upper bounds. All non-negative.
    pub multipliers: Vec<f64>,
}

/// Residuals of the KKT conditions at a candidate point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KktReport {
    pub stationarity: f64,
    pub primal_feasibility: f64,
    pub complementarity: f64,
    pub passed: bool,
}

pub fn solve_qp(problem: &QpProblem, settings: &QpSettings) -> Result<QpSolution, QpError> {
    problem.validate()?;
    let n = problem.num_vars();
    let (a, b) = problem.stacked_rows();
    let h = problem.hessian.to_dmatrix();

    let chol = h.cholesky().ok_or(QpError::NotConvex)?;
    let l_inv = chol
        .l()
        .solve_lower_triangular(&DMatrix::identity(n, n))
        .ok_or(QpError::NotConvex)?;
    let j0 = l_inv.transpose();

    let mut solver = DualActiveSet::new(n, &j0);
    let q = DVector::from_column_slice(&problem.linear_cost);
    // x0 = -H^-1 q = -J J' q
    let x0 = -(&j0 * (j0.transpose() * q));
    let outcome = solver.run(x0.as_slice().to_vec(), &a, &b, settings.max_iter);

    let mut multipliers = vec![0.0; b.len()];
    for (&row, &u) in solver.active.iter().zip(&solver.u) {
        multipliers[row] = u.max(0.0);
    }
    let z = outcome.x;
    let res = kkt_residuals(problem, &z, &multipliers);
    // stationarity is judged relative to the size of the terms that cancel
    let dual_tol = settings.tol_dual * stationarity_scale(problem, &z, &multipliers);
    let status = match outcome.status {
        QpStatus::Optimal if res.primal_feasibility > settings.tol_primal || res.stationarity > dual_tol => {
            QpStatus::MaxIterations
        }
        s => s,
    };
    Ok(QpSolution {
        objective: problem.objective(&z),
        z_star: z,
        status,
        iterations: outcome.iterations,
        primal_residual: res.primal_feasibility,
        dual_residual: res.stationarity,
        multipliers,
    })
}

struct Outcome {
    x: Vec<f64>,
    status: QpStatus,
    iterations: usize,
}

/// Working state of the Goldfarb-Idnani iteration.
///
/// `j` and `r` are column-major `n x n`. Columns `0..q` of `j` span the
/// active normals, the remaining columns their null space; `r` is upper
/// triangular in its first `q` columns.
struct DualActiveSet {
    n: usize,
    j: Vec<f64>,
    r: Vec<f64>,
    active: Vec<usize>,
    u: Vec<f64>,
}

impl DualActiveSet {
    fn new(n: usize, j0: &DMatrix<f64>) -> Self {
        // nalgebra storage is column-major already
        Self {
            n,
            j: j0.as_slice().to_vec(),
            r: vec![0.0; n * n],
            active: Vec::new(),
            u: Vec::new(),
        }
    }

    fn col(&self, k: usize) -> &[f64] {
        &self.j[k * self.n..(k + 1) * self.n]
    }

    fn rotate_j(&mut self, k0: usize, k1: usize, c: f64, s: f64) {
        let n = self.n;
        for row in 0..n {
            let a = self.j[k0 * n + row];
            let b = self.j[k1 * n + row];
            self.j[k0 * n + row] = c * a + s * b;
            self.j[k1 * n + row] = -s * a + c * b;
        }
    }

    fn run(&mut self, mut x: Vec<f64>, a: &[f64], b: &[f64], max_iter: usize) -> Outcome {
        let n = self.n;
        let m = b.len();
        let row_norms: Vec<f64> = (0..m).map(|i| norm(&a[i * n..(i + 1) * n])).collect();
        let mut iterations = 0;

        loop {
            // most violated constraint, measured as distance to its hyperplane
            let mut pick = None;
            let mut worst = 0.0;
            for i in 0..m {
                if b[i] == f64::INFINITY || self.active.contains(&i) {
                    continue;
                }
                let ai = &a[i * n..(i + 1) * n];
                let slack = b[i] - dot(ai, &x);
                let tol = 1e-13 * (1.0 + b[i].abs() + row_norms[i] * inf_norm(&x));
                if slack < -tol {
                    let viol = -slack / row_norms[i].max(f64::MIN_POSITIVE);
                    if viol > worst {
                        worst = viol;
                        pick = Some(i);
                    }
                }
            }
            let Some(p) = pick else {
                return Outcome {
                    x,
                    status: QpStatus::Optimal,
                    iterations,
                };
            };
            // constraint p in the form np . x >= -b_p
            let np: Vec<f64> = a[p * n..(p + 1) * n].iter().map(|v| -v).collect();
            let mut u_new = 0.0;

            loop {
                iterations += 1;
                if iterations > max_iter {
                    return Outcome {
                        x,
                        status: QpStatus::MaxIterations,
                        iterations,
                    };
                }
                let q = self.active.len();
                let mut d: Vec<f64> = (0..n).map(|k| dot(self.col(k), &np)).collect();

                // primal direction z = J2 d2, dual direction r = R^-1 d1
                let mut z = vec![0.0; n];
                for k in q..n {
                    axpy(d[k], self.col(k), &mut z);
                }
                let r = self.back_substitute(&d[..q]);

                let mut t1 = f64::INFINITY;
                let mut drop_at = None;
                for (k, &rk) in r.iter().enumerate() {
                    if rk > 0.0 {
                        let ratio = self.u[k] / rk;
                        if ratio < t1 {
                            t1 = ratio;
                            drop_at = Some(k);
                        }
                    }
                }

                let zn: f64 = d[q..].iter().map(|v| v * v).sum();
                let dn: f64 = d.iter().map(|v| v * v).sum();
                let slack_p = b[p] - dot(&a[p * n..(p + 1) * n], &x);
                let t2 = if zn > 1e-20 * dn && zn > 0.0 {
                    (-slack_p / zn).max(0.0)
                } else {
                    f64::INFINITY
                };

                if t1.is_infinite() && t2.is_infinite() {
                    return Outcome {
                        x,
                        status: QpStatus::Infeasible,
                        iterations,
                    };
                }

                if t2.is_infinite() {
                    for (uk, rk) in self.u.iter_mut().zip(&r) {
                        *uk -= t1 * rk;
                    }
                    u_new += t1;
                    self.drop_constraint(drop_at.expect("finite t1 has an index"));
                    continue;
                }

                let t = t1.min(t2);
                axpy(t, &z, &mut x);
                for (uk, rk) in self.u.iter_mut().zip(&r) {
                    *uk -= t * rk;
                }
                u_new += t;

                if t2 <= t1 {
                    self.add_constraint(p, &mut d, u_new);
                    break;
                }
                self.drop_constraint(drop_at.expect("finite t1 has an index"));
            }
        }
    }

    fn back_substitute(&self, d1: &[f64]) -> Vec<f64> {
        let n = self.n;
        let q = d1.len();
        let mut r = d1.to_vec();
        for i in (0..q).rev() {
            for k in i + 1..q {
                r[i] -= self.r[k * n + i] * r[k];
            }
            r[i] /= self.r[i * n + i];
        }
        r
    }

    fn add_constraint(&mut self, p: usize, d: &mut [f64], u_new: f64) {
        let n = self.n;
        let q = self.active.len();
        for k in (q + 1..n).rev() {
            let (a, b) = (d[k - 1], d[k]);
            if b == 0.0 {
                continue;
            }
            let h = a.hypot(b);
            let (c, s) = (a / h, b / h);
            d[k - 1] = h;
            d[k] = 0.0;
            self.rotate_j(k - 1, k, c, s);
        }
        for i in 0..n {
            self.r[q * n + i] = if i <= q { d[i] } else { 0.0 };
        }
        self.active.push(p);
        self.u.push(u_new);
    }

    fn drop_constraint(&mut self, k: usize) {
        let n = self.n;
        let q = self.active.len();
        self.active.remove(k);
        self.u.remove(k);
        for col in k..q - 1 {
            for i in 0..n {
                self.r[col * n + i] = self.r[(col + 1) * n + i];
            }
        }
        let q = q - 1;
        // restore triangular form: R is upper Hessenberg from column k on
        for jj in k..q {
            let a = self.r[jj * n + jj];
            let b = self.r[jj * n + jj + 1];
            if b == 0.0 {
                continue;
            }
            let h = a.hypot(b);
            let (c, s) = (a / h, b / h);
            for col in jj..q {
                let x0 = self.r[col * n + jj];
                let x1 = self.r[col * n + jj + 1];
                self.r[col * n + jj] = c * x0 + s * x1;
                self.r[col * n + jj + 1] = -s * x0 + c * x1;
            }
            self.r[jj * n + jj + 1] = 0.0;
            self.rotate_j(jj, jj + 1, c, s);
        }
        for i in 0..n {
            self.r[q * n + i] = 0.0;
        }
    }
}

/// KKT residuals for a point and a full multiplier vector (layout as in
/// [`QpSolution::multipliers`]).
pub fn kkt_residuals(problem: &QpProblem, z: &[f64], multipliers: &[f64]) -> KktReport {
    let n = problem.num_vars();
    let (a, b) = problem.stacked_rows();
    let mut grad = problem.hessian.mul_vec(z);
    for (g, c) in grad.iter_mut().zip(&problem.linear_cost) {
        *g += c;
    }
    let mut primal = 0.0_f64;
    let mut comp = 0.0_f64;
    for (i, (&bi, &lam)) in b.iter().zip(multipliers).enumerate() {
        let ai = &a[i * n..(i + 1) * n];
        if lam != 0.0 {
            axpy(lam, ai, &mut grad);
        }
        if bi.is_infinite() {
            continue;
        }
        let slack = bi - dot(ai, z);
        primal = primal.max(-slack);
        comp = comp.max((lam * slack).abs());
    }
    let stationarity = inf_norm(&grad);
    KktReport {
        stationarity,
        primal_feasibility: primal.max(0.0),
        complementarity: comp,
        passed: false,
    }
}

/// `max(1, |Hz|, |q|, |A' lambda|)` in the infinity norm.
fn stationarity_scale(problem: &QpProblem, z: &[f64], multipliers: &[f64]) -> f64 {
    let n = problem.num_vars();
    let (a, _) = problem.stacked_rows();
    let mut at_lambda = vec![0.0; n];
    for (i, &lam) in multipliers.iter().enumerate() {
        if lam != 0.0 {
            axpy(lam, &a[i * n..(i + 1) * n], &mut at_lambda);
        }
    }
    1.0_f64
        .max(inf_norm(&problem.hessian.mul_vec(z)))
        .max(inf_norm(&problem.linear_cost))
        .max(inf_norm(&at_lambda))
}

/// Checks the KKT conditions at `candidate` without being given multipliers.
///
/// Multipliers are estimated by non-negative least squares over the rows
/// whose slack is below `tol` (violated rows included), which is exact for a
/// true KKT point.
pub fn check_kkt(problem: &QpProblem, candidate: &[f64], tol: f64) -> Result<KktReport, QpError> {
    problem.validate()?;
    let n = problem.num_vars();
    if candidate.len() != n {
        return Err(QpError::Dimension(format!(
            "candidate has {} entries, problem has {n} variables",
            candidate.len()
        )));
    }
    let (a, b) = problem.stacked_rows();
    let near: Vec<usize> = (0..b.len())
        .filter(|&i| b[i].is_finite() && b[i] - dot(&a[i * n..(i + 1) * n], candidate) <= tol)
        .collect();

    let mut grad = problem.hessian.mul_vec(candidate);
    for (g, c) in grad.iter_mut().zip(&problem.linear_cost) {
        *g += c;
    }
    // minimize |grad + A_near' lam|, lam >= 0
    let e = DMatrix::from_fn(n, near.len(), |r, c| a[near[c] * n + r]);
    let f = -DVector::from_column_slice(&grad);
    let lam_near = nnls(&e, &f);

    let mut multipliers = vec![0.0; b.len()];
    for (k, &i) in near.iter().enumerate() {
        multipliers[i] = lam_near[k];
    }
    let mut report = kkt_residuals(problem, candidate, &multipliers);
    report.passed = report.stationarity <= tol && report.primal_feasibility <= tol && report.complementarity <= tol;
    Ok(report)
}

/// Lawson-Hanson active-set NNLS: `min |E x - f|` subject to `x >= 0`.
fn nnls(e: &DMatrix<f64>, f: &DVector<f64>) -> Vec<f64> {
    let k = e.ncols();
    let mut x = DVector::zeros(k);
    if k == 0 {
        return Vec::new();
    }
    let mut passive = vec![false; k];
    let scale = e.norm().max(1.0) * f.norm().max(1.0);
    let tol = 1e-14 * scale;

    for _outer in 0..(3 * k + 10) {
        let w = e.transpose() * (f - e * &x);
        let next = (0..k)
            .filter(|&j| !passive[j] && w[j] > tol)
            .max_by(|&i, &j| w[i].total_cmp(&w[j]));
        let Some(j) = next else { break };
        passive[j] = true;

        for _inner in 0..(3 * k + 10) {
            let idx: Vec<usize> = (0..k).filter(|&j| passive[j]).collect();
            let ep = DMatrix::from_fn(e.nrows(), idx.len(), |r, c| e[(r, idx[c])]);
            let sol = ep
                .svd(true, true)
                .solve(f, 1e-13)
                .unwrap_or_else(|_| DVector::zeros(idx.len()));
            if sol.iter().all(|&v| v > 0.0) {
                for (c, &j) in idx.iter().enumerate() {
                    x[j] = sol[c];
                }
                break;
            }
            let mut alpha = f64::INFINITY;
            for (c, &j) in idx.iter().enumerate() {
                if sol[c] <= 0.0 {
                    alpha = alpha.min(x[j] / (x[j] - sol[c]));
                }
            }
            for (c, &j) in idx.iter().enumerate() {
                x[j] += alpha * (sol[c] - x[j]);
                if x[j] <= 1e-15 * scale {
                    x[j] = 0.0;
                    passive[j] = false;
                }
            }
        }
    }
    x.iter().copied().collect()
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn inf_norm(a: &[f64]) -> f64 {
    a.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn settings() -> QpSettings {
        QpSettings::default()
    }

    #[test]
    fn sym_matrix_mirrors() {
        let mut m = SymMatrix::zeros(3);
        m.set(2, 0, 4.5);
        assert_eq!(m.get(0, 2), 4.5);
        assert_eq!(m.get(2, 0), 4.5);
        let full = m.to_dmatrix();
        assert_eq!(full, full.transpose());
    }

    #[test]
    fn unconstrained_centered_quadratic() {
        let p = QpProblem::new(SymMatrix::from_diagonal(&[2.0, 2.0]), vec![0.0, 0.0]);
        let s = solve_qp(&p, &settings()).unwrap();
        assert_eq!(s.status, QpStatus::Optimal);
        assert_eq!(s.z_star, vec![0.0, 0.0]);
        assert_eq!(s.objective, 0.0);
        assert_eq!(s.iterations, 0);
    }

    #[test]
    fn symmetric_split_under_one_constraint() {
        // u^2 + d^2 with u + d >= 1
        let p = QpProblem::new(SymMatrix::from_diagonal(&[2.0, 2.0]), vec![0.0, 0.0])
            .with_inequalities(vec![-1.0, -1.0], vec![-1.0]);
        let s = solve_qp(&p, &settings()).unwrap();
        assert_eq!(s.status, QpStatus::Optimal);
        assert!((s.z_star[0] - 0.5).abs() < 1e-12);
        assert!((s.z_star[1] - 0.5).abs() < 1e-12);
        assert!((s.objective - 0.5).abs() < 1e-12);
        assert!((s.multipliers[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn bounds_are_respected() {
        let p = QpProblem::new(SymMatrix::from_diagonal(&[1.0, 1.0]), vec![-3.0, 3.0])
            .with_bounds(vec![-1.0, -1.0], vec![1.0, 1.0]);
        let s = solve_qp(&p, &settings()).unwrap();
        assert_eq!(s.status, QpStatus::Optimal);
        assert!((s.z_star[0] - 1.0).abs() < 1e-12);
        assert!((s.z_star[1] + 1.0).abs() < 1e-12);
    }

    #[test]
    fn contradictory_rows_are_infeasible() {
        // z <= -1 and z >= 1
        let p = QpProblem::new(SymMatrix::from_diagonal(&[1.0]), vec![0.0])
            .with_inequalities(vec![1.0, -1.0], vec![-1.0, -1.0]);
        let s = solve_qp(&p, &settings()).unwrap();
        assert_eq!(s.status, QpStatus::Infeasible);
    }

    #[test]
    fn crossed_bounds_are_infeasible() {
        let p = QpProblem::new(SymMatrix::from_diagonal(&[1.0, 1.0]), vec![0.0, 0.0])
            .with_bounds(vec![0.0, 1.0], vec![1.0, 0.5]);
        assert_eq!(solve_qp(&p, &settings()).unwrap().status, QpStatus::Infeasible);
    }

    #[test]
    fn zero_diagonal_is_regularized() {
        let p = QpProblem::new(SymMatrix::from_diagonal(&[2.0, 0.0]), vec![0.0, 0.0]);
        assert_eq!(p.hessian.get(1, 1), EPS_REG);
        let s = solve_qp(&p, &settings()).unwrap();
        assert_eq!(s.status, QpStatus::Optimal);
    }

    #[test]
    fn dimension_errors() {
        let p = QpProblem::new(SymMatrix::from_diagonal(&[1.0, 1.0]), vec![0.0]);
        assert!(matches!(solve_qp(&p, &settings()), Err(QpError::Dimension(_))));
        let p = QpProblem::new(SymMatrix::zeros(0), vec![]);
        assert_eq!(solve_qp(&p, &settings()), Err(QpError::Empty));
        let p = QpProblem::new(SymMatrix::from_diagonal(&[1.0]), vec![0.0]);
        assert!(check_kkt(&p, &[0.0, 1.0], 1e-6).is_err());
    }

    #[test]
    fn indefinite_hessian_rejected() {
        let p = QpProblem::new(SymMatrix::from_upper(2, &[1.0, 3.0, 3.0, 1.0]), vec![0.0, 0.0]);
        assert_eq!(solve_qp(&p, &settings()), Err(QpError::NotConvex));
    }

    #[test]
    fn kkt_exact_unconstrained_minimizer() {
        let p = QpProblem::new(SymMatrix::from_diagonal(&[2.0, 4.0]), vec![-2.0, 4.0]);
        let r = check_kkt(&p, &[1.0, -1.0], 1e-9).unwrap();
        assert_eq!(r.stationarity, 0.0);
        assert_eq!(r.primal_feasibility, 0.0);
        assert_eq!(r.complementarity, 0.0);
        assert!(r.passed);
    }

    #[test]
    fn kkt_reports_violation() {
        // z0 <= 0 violated by 0.1
        let p = QpProblem::new(SymMatrix::from_diagonal(&[1.0, 1.0]), vec![0.0, 0.0])
            .with_inequalities(vec![1.0, 0.0], vec![0.0]);
        let r = check_kkt(&p, &[0.1, 0.0], 1e-6).unwrap();
        assert!(r.primal_feasibility >= 0.1 - 1e-15);
        assert!(!r.passed);
    }

    #[test]
    fn kkt_constrained_optimum() {
        let p = QpProblem::new(SymMatrix::from_diagonal(&[2.0, 2.0]), vec![0.0, 0.0])
            .with_inequalities(vec![-1.0, -1.0], vec![-1.0]);
        let r = check_kkt(&p, &[0.5, 0.5], 1e-9).unwrap();
        assert!(r.passed, "{r:?}");
        let r = check_kkt(&p, &[0.6, 0.6], 1e-9).unwrap();
        assert!(!r.passed);
    }

    #[test]
    fn degenerate_duplicate_rows() {
        // the same half-plane stated three times, plus a redundant one
        let p = QpProblem::new(SymMatrix::from_diagonal(&[2.0, 2.0]), vec![0.0, 0.0]).with_inequalities(
            vec![-1.0, -1.0, -1.0, -1.0, -2.0, -2.0, -1.0, 0.0],
            vec![-1.0, -1.0, -2.0, 5.0],
        );
        let s = solve_qp(&p, &settings()).unwrap();
        assert_eq!(s.status, QpStatus::Optimal);
        assert!((s.objective - 0.5).abs() < 1e-12);
        assert!(check_kkt(&p, &s.z_star, 1e-9).unwrap().passed);
    }
}
