//! Independent reference computations used to cross-check the production
//! solvers, plus seeded random suites built on them.
//!
//! - [`dual_projected_gradient`]: accelerated projected gradient on the QP
//!   dual, `z(lambda) = -H^-1 (q + A' lambda)`.
//! - [`monolithic_allocation`]: assembles the joint QP of all robots for every
//!   assignment and solves it in one piece.
//! - [`accumulator_suite`]: replays random update sequences and recomputes the
//!   integral term from the stored history.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::adaptation::{
    update_specialization, AdaptationMode, AdaptationParams, DeviationMatrix, IntegralAccumulator,
};
use crate::allocator::{
    exhaustive_argmin, mismatch_cost, solve_allocation, AllocError, Assignment, GlobalSpec, SpecializationState,
};
use crate::geometry::Vec2;
use crate::qp::{check_kkt, solve_qp, QpProblem, QpSettings, QpStatus, SymMatrix, EPS_REG};
use crate::task::{GammaConfig, TaskDef};

/// Pass/fail tally of one suite.
#[derive(Debug, Clone, PartialEq)]
pub struct SuiteReport {
    pub name: &'static str,
    pub passed: usize,
    pub failures: Vec<String>,
}

impl SuiteReport {
    fn new(name: &'static str) -> Self {
        Self {
            name,
            passed: 0,
            failures: Vec::new(),
        }
    }

    fn record(&mut self, case: usize, outcome: Result<(), String>) {
        match outcome {
            Ok(()) => self.passed += 1,
            Err(e) => self.failures.push(format!("case {case}: {e}")),
        }
    }

    pub fn failed(&self) -> usize {
        self.failures.len()
    }

    pub fn ok(&self) -> bool {
        self.failures.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DualSolution {
    pub z: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Solves `min 1/2 z'Hz + q'z  s.t. Az <= b, lower <= z <= upper` through its
/// dual with FISTA and adaptive restart. Only meant for small, well
/// conditioned problems.
pub fn dual_projected_gradient(problem: &QpProblem, tol: f64, max_iter: usize) -> Option<DualSolution> {
    let n = problem.num_vars();
    let mut rows: Vec<f64> = problem.ineq_matrix.clone();
    let mut rhs: Vec<f64> = problem.ineq_rhs.clone();
    for i in 0..n {
        if problem.upper[i].is_finite() {
            let mut r = vec![0.0; n];
            r[i] = 1.0;
            rows.extend(r);
            rhs.push(problem.upper[i]);
        }
        if problem.lower[i].is_finite() {
            let mut r = vec![0.0; n];
            r[i] = -1.0;
            rows.extend(r);
            rhs.push(-problem.lower[i]);
        }
    }
    let m = rhs.len();
    let h = problem.hessian.to_dmatrix();
    let h_inv = h.cholesky()?.inverse();
    let q = DVector::from_column_slice(&problem.linear_cost);
    let primal = |lambda: &DVector<f64>, a: &DMatrix<f64>| -(&h_inv * (&q + a.transpose() * lambda));
    if m == 0 {
        let z = primal(&DVector::zeros(0), &DMatrix::zeros(0, n));
        return Some(DualSolution {
            objective: problem.objective(z.as_slice()),
            z: z.as_slice().to_vec(),
            iterations: 0,
            converged: true,
        });
    }
    let a = DMatrix::from_row_slice(m, n, &rows);
    let b = DVector::from_vec(rhs);
    let lipschitz = (&a * &h_inv * a.transpose()).symmetric_eigen().eigenvalues.max().max(1e-12);
    let step = 1.0 / lipschitz;
    let grad = |lambda: &DVector<f64>| &b - &a * primal(lambda, &a);

    let mut lambda = DVector::zeros(m);
    let mut y = lambda.clone();
    let mut t = 1.0f64;
    for it in 0..max_iter {
        let g = grad(&y);
        let next = (&y - g * step).map(|v| v.max(0.0));
        // gradient-based restart
        let restart = (&y - &next).dot(&(&next - &lambda)) > 0.0;
        let t_next = if restart { 1.0 } else { 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt()) };
        y = if restart {
            next.clone()
        } else {
            &next + (&next - &lambda) * ((t - 1.0) / t_next)
        };
        t = t_next;
        lambda = next;

        if it % 16 == 0 {
            let g = grad(&lambda);
            let proj = (&lambda - (&lambda - &g).map(|v| v.max(0.0))).amax();
            if proj <= tol {
                let z = primal(&lambda, &a);
                return Some(DualSolution {
                    objective: problem.objective(z.as_slice()),
                    z: z.as_slice().to_vec(),
                    iterations: it + 1,
                    converged: true,
                });
            }
        }
    }
    let z = primal(&lambda, &a);
    Some(DualSolution {
        objective: problem.objective(z.as_slice()),
        z: z.as_slice().to_vec(),
        iterations: max_iter,
        converged: false,
    })
}

/// A strictly feasible QP with a well conditioned Hessian. About a third of
/// the instances also carry box bounds.
pub fn random_feasible_qp<R: Rng>(rng: &mut R, n_z: usize, n_c: usize) -> QpProblem {
    let mut m = DMatrix::<f64>::zeros(n_z, n_z);
    for v in m.iter_mut() {
        *v = rng.random_range(-1.0..1.0);
    }
    let h = m.transpose() * &m + DMatrix::identity(n_z, n_z) * 0.5;
    // symmetric, so column-major storage reads the same as row-major
    let full = h.as_slice().to_vec();
    let q: Vec<f64> = (0..n_z).map(|_| rng.random_range(-5.0..5.0)).collect();
    let z0: Vec<f64> = (0..n_z).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut qp = QpProblem::new(SymMatrix::from_upper(n_z, &full), q);
    for _ in 0..n_c {
        let row: Vec<f64> = (0..n_z).map(|_| rng.random_range(-1.0..1.0)).collect();
        let b = row.iter().zip(&z0).map(|(a, z)| a * z).sum::<f64>() + rng.random_range(0.05..1.0);
        qp.push_row(&row, b);
    }
    if rng.random_bool(0.3) {
        let lower = z0.iter().map(|z| z - rng.random_range(0.2..2.0)).collect();
        let upper = z0.iter().map(|z| z + rng.random_range(0.2..2.0)).collect();
        qp = qp.with_bounds(lower, upper);
    }
    qp
}

/// Compares [`solve_qp`] with the dual oracle on `count` random problems
/// (`n_z <= 10`, `n_c <= 20`).
pub fn qp_suite(count: usize, seed: u64) -> SuiteReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let settings = QpSettings::default();
    let mut report = SuiteReport::new("qp");
    for case in 0..count {
        let n_z = rng.random_range(1..=10);
        let n_c = rng.random_range(0..=20);
        let qp = random_feasible_qp(&mut rng, n_z, n_c);
        report.record(case, check_qp_case(&qp, &settings));
    }
    report
}

fn check_qp_case(qp: &QpProblem, settings: &QpSettings) -> Result<(), String> {
    let sol = solve_qp(qp, settings).map_err(|e| e.to_string())?;
    if sol.status != QpStatus::Optimal {
        return Err(format!("status {:?}", sol.status));
    }
    let kkt = check_kkt(qp, &sol.z_star, 1e-6).map_err(|e| e.to_string())?;
    if !kkt.passed {
        return Err(format!("KKT residuals {kkt:?}"));
    }
    let reference = dual_projected_gradient(qp, 1e-10, 2_000_000).ok_or("oracle: Hessian not positive definite")?;
    if !reference.converged {
        return Err("oracle did not converge".into());
    }
    let gap = (sol.objective - reference.objective).abs();
    if gap > 1e-5 {
        return Err(format!(
            "objective {} vs oracle {} (gap {gap:e})",
            sol.objective, reference.objective
        ));
    }
    Ok(())
}

/// Everything [`solve_allocation`] needs.
#[derive(Debug, Clone, PartialEq)]
pub struct AllocationInstance {
    pub states: Vec<Vec2>,
    pub tasks: Vec<TaskDef>,
    pub spec: SpecializationState,
    pub global: GlobalSpec,
    pub gamma: GammaConfig,
}

pub fn random_allocation_instance<R: Rng>(rng: &mut R, robots: usize, tasks: usize) -> AllocationInstance {
    let point = |rng: &mut R| Vec2::new(rng.random_range(-1.5..1.5), rng.random_range(-0.9..0.9));
    let states = (0..robots).map(|_| point(rng)).collect();
    let tasks: Vec<TaskDef> = (0..tasks).map(|j| TaskDef::go_to_goal(j, point(rng))).collect();
    let rows: Vec<Vec<f64>> = (0..robots)
        .map(|_| {
            (0..tasks.len())
                .map(|_| if rng.random_bool(0.25) { 0.0 } else { rng.random_range(0.0..1.0) })
                .collect()
        })
        .collect();
    let spec = SpecializationState::new(&rows, 1.0, 1e-3).expect("values drawn inside [0, 1]");
    let weights: Vec<f64> = (0..tasks.len()).map(|_| rng.random_range(0.1..1.0)).collect();
    let total: f64 = weights.iter().sum();
    let kappa = rng.random_range(2.0..20.0);
    // largest cost in the arena is below 16, keep every hypothesis feasible
    let global = GlobalSpec {
        pi_star: weights.iter().map(|w| w / total).collect(),
        task_weights: (0..tasks.len()).map(|_| rng.random_range(0.5..2.0)).collect(),
        mismatch_weight: rng.random_range(0.0..100.0),
        slack_weight: rng.random_range(1.0..20.0),
        kappa,
        delta_max: kappa * 20.0,
        u_max: rng.random_range(0.1..0.5),
    };
    let gamma = if rng.random_bool(0.5) {
        GammaConfig::linear(rng.random_range(0.5..2.0))
    } else {
        GammaConfig::cubic(rng.random_range(0.5..2.0))
    };
    AllocationInstance {
        states,
        tasks,
        spec,
        global,
        gamma,
    }
}

/// Appends one robot's block of the joint problem: barrier rows, priority
/// rows for the prioritized task, and the slack and input boxes.
fn push_joint_block(
    rows: &mut Vec<(Vec<(usize, f64)>, f64)>,
    offset: usize,
    state: Vec2,
    chosen: usize,
    inst: &AllocationInstance,
) {
    let m = inst.tasks.len();
    let g = &inst.global;
    let (ux, uy) = (offset, offset + 1);
    let d = |j: usize| offset + 2 + j;
    for (j, task) in inst.tasks.iter().enumerate() {
        // grad V . u <= -gamma(-V) + delta  with V = |x - g|^2
        let e = state - task.goal;
        let v = e.norm_squared();
        rows.push((vec![(ux, 2.0 * e.x), (uy, 2.0 * e.y), (d(j), -1.0)], inst.gamma.eval(-v)));
    }
    for a in 0..m {
        for b in 0..m {
            if a != b {
                let omega = if a == chosen { 0.0 } else { (1.0 + 1.0 / g.kappa) * g.delta_max };
                rows.push((vec![(d(a), 1.0), (d(b), -1.0 / g.kappa)], omega));
            }
        }
    }
    for j in 0..m {
        rows.push((vec![(d(j), 1.0)], g.delta_max));
        rows.push((vec![(d(j), -1.0)], g.delta_max));
    }
    for axis in [ux, uy] {
        rows.push((vec![(axis, 1.0)], g.u_max));
        rows.push((vec![(axis, -1.0)], g.u_max));
    }
}

/// Exhaustive allocation where every assignment is scored by solving the
/// joint QP of the whole team at once.
pub fn monolithic_allocation(
    inst: &AllocationInstance,
    settings: &QpSettings,
) -> Result<(Assignment, f64), AllocError> {
    let n = inst.states.len();
    let m = inst.tasks.len();
    let block = 2 + m;
    let nz = n * block;
    let mut diag = vec![0.0; nz];
    for i in 0..n {
        diag[i * block] = 2.0;
        diag[i * block + 1] = 2.0;
        for j in 0..m {
            let s = inst.spec.get(i, j);
            diag[i * block + 2 + j] = if s == 0.0 { EPS_REG } else { 2.0 * inst.global.slack_weight * s };
        }
    }
    exhaustive_argmin(n, m, |task_of| {
        let mut rows = Vec::new();
        for (i, &t) in task_of.iter().enumerate() {
            push_joint_block(&mut rows, i * block, inst.states[i], t, inst);
        }
        let mut qp = QpProblem::new(SymMatrix::from_diagonal(&diag), vec![0.0; nz]);
        let mut dense = vec![0.0; nz];
        for (sparse, b) in &rows {
            dense.fill(0.0);
            for &(c, v) in sparse {
                dense[c] = v;
            }
            qp.push_row(&dense, *b);
        }
        let sol = solve_qp(&qp, settings).map_err(|source| AllocError::Qp {
            robot: 0,
            task: 0,
            source,
        })?;
        if sol.status != QpStatus::Optimal {
            return Err(AllocError::Infeasible { robot: 0, task: 0 });
        }
        let z = &sol.z_star;
        let mut energy = 0.0;
        let mut counts = vec![0.0; m];
        for (i, &t) in task_of.iter().enumerate() {
            let base = i * block;
            energy += z[base] * z[base] + z[base + 1] * z[base + 1];
            for j in 0..m {
                energy += inst.global.slack_weight * inst.spec.get(i, j) * z[base + 2 + j] * z[base + 2 + j];
            }
            if inst.spec.get(i, t) > inst.spec.eps_s {
                counts[t] += 1.0;
            }
        }
        let pi: Vec<f64> = counts.iter().map(|c| c / n as f64).collect();
        Ok(mismatch_cost(&inst.global, &pi) + energy)
    })
}

/// Compares [`solve_allocation`] with [`monolithic_allocation`] on random
/// instances with `N, M <= 3`.
pub fn miqp_suite(count: usize, seed: u64) -> SuiteReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let settings = QpSettings::default();
    let mut report = SuiteReport::new("miqp");
    for case in 0..count {
        let n = rng.random_range(1..=3);
        let m = rng.random_range(1..=3);
        let inst = random_allocation_instance(&mut rng, n, m);
        let outcome = (|| {
            let fast = solve_allocation(&inst.states, &inst.tasks, &inst.spec, &inst.global, &inst.gamma, &settings)
                .map_err(|e| format!("decomposed: {e}"))?;
            let (assignment, objective) =
                monolithic_allocation(&inst, &settings).map_err(|e| format!("monolithic: {e}"))?;
            if fast.assignment != assignment {
                return Err(format!(
                    "assignment {:?} vs monolithic {:?}",
                    fast.assignment.task_of, assignment.task_of
                ));
            }
            let gap = (fast.objective_total - objective).abs();
            if gap > 1e-8 {
                return Err(format!("objective {} vs monolithic {objective} (gap {gap:e})", fast.objective_total));
            }
            Ok(())
        })();
        report.record(case, outcome);
    }
    report
}

/// Random `WithIntegral` update sequences (no leak). After every step the
/// accumulator must match `sum_l (s_bar - s[l]) dt` recomputed from the stored
/// history to 1e-12, and every entry must stay within `[0, s_max]`.
pub fn accumulator_suite(count: usize, seed: u64) -> SuiteReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = SuiteReport::new("adaptation");
    for case in 0..count {
        let n = rng.random_range(1..=3);
        let m = rng.random_range(1..=3);
        let steps = rng.random_range(10..300);
        let matrix = |rng: &mut ChaCha8Rng| -> Vec<Vec<f64>> {
            (0..n).map(|_| (0..m).map(|_| rng.random_range(0.0..=1.0)).collect()).collect()
        };
        let params = AdaptationParams {
            mode: AdaptationMode::WithIntegral,
            beta1: rng.random_range(0.1..10.0),
            beta2: rng.random_range(0.001..1.0),
            leak: 0.0,
            dt: rng.random_range(0.01..0.2),
            s_bar: matrix(&mut rng),
        };
        let mut spec = SpecializationState::new(&matrix(&mut rng), 1.0, 1e-3).expect("values in [0, 1]");
        let mut acc = IntegralAccumulator::zeros(n, m);
        let mut history = vec![spec.clone()];
        let mut outcome = Ok(());
        'steps: for _ in 0..steps {
            let assignment = Assignment::new((0..n).map(|_| rng.random_range(0..m)).collect());
            let dev = DeviationMatrix {
                values: (0..n).map(|_| (0..m).map(|_| rng.random_range(-1.0..1.0)).collect()).collect(),
            };
            spec = update_specialization(&spec, &assignment, &dev, &params, &mut acc);
            for i in 0..n {
                for j in 0..m {
                    // the accumulator holds every state before this update
                    let direct: f64 = history.iter().map(|s| (params.s_bar[i][j] - s.get(i, j)) * params.dt).sum();
                    if (acc.get(i, j) - direct).abs() > 1e-12 {
                        outcome = Err(format!("acc[{i}][{j}] = {} vs recomputed {direct}", acc.get(i, j)));
                        break 'steps;
                    }
                    let s = spec.get(i, j);
                    if !(0.0..=spec.s_max).contains(&s) {
                        outcome = Err(format!("s[{i}][{j}] = {s} escaped [0, s_max]"));
                        break 'steps;
                    }
                }
            }
            history.push(spec.clone());
        }
        report.record(case, outcome);
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dual_oracle_simple() {
        // min u^2 + d^2 s.t. u + d >= 1
        let qp = QpProblem::new(SymMatrix::from_diagonal(&[2.0, 2.0]), vec![0.0, 0.0])
            .with_inequalities(vec![-1.0, -1.0], vec![-1.0]);
        let sol = dual_projected_gradient(&qp, 1e-12, 100_000).unwrap();
        assert!(sol.converged);
        assert!((sol.z[0] - 0.5).abs() < 1e-9 && (sol.z[1] - 0.5).abs() < 1e-9);
        assert!((sol.objective - 0.5).abs() < 1e-9);
    }

    #[test]
    fn dual_oracle_with_bounds() {
        let qp = QpProblem::new(SymMatrix::from_diagonal(&[2.0]), vec![-4.0]).with_bounds(vec![-1.0], vec![1.0]);
        let sol = dual_projected_gradient(&qp, 1e-12, 100_000).unwrap();
        assert!((sol.z[0] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn small_suites_pass() {
        let r = qp_suite(10, 7);
        assert!(r.ok(), "{:?}", r.failures);
        let r = miqp_suite(5, 7);
        assert!(r.ok(), "{:?}", r.failures);
        let r = accumulator_suite(5, 7);
        assert!(r.ok(), "{:?}", r.failures);
    }
}
