//! Simultaneous task allocation and execution.
//!
//! Each step solves
//!
//! ```text
//!   min_{u, delta, alpha}  C |pi* - pi_h(alpha)|_T^2 + sum_i ( |u_i|^2 + l |delta_i|_{S_i}^2 )
//!   s.t.  grad V_im . u_i <= -gamma_0 V_im + delta_im            (barrier rows)
//!         delta_im' - delta_in / kappa <= Omega_m'n(alpha_i)      (priority rows)
//!         |delta_i|_inf <= delta_max,  |u_i|_inf <= u_max,  1' alpha_i = 1
//! ```
//!
//! For a fixed one-hot `alpha` the continuous part separates per robot, so
//! every `(robot, task)` hypothesis is solved once as a small QP and the
//! assignment is found by exhaustive search over the memoized costs.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Vec2;
use crate::qp::{solve_qp, QpError, QpProblem, QpSettings, QpStatus, SymMatrix};
use crate::task::{barrier_row, GammaConfig, TaskDef, TaskError};

/// Largest admissible `N log2 M` for exhaustive search.
pub const MAX_SEARCH_BITS: f64 = 24.0;

/// Objectives closer than this (relative) are treated as ties and resolved
/// lexicographically.
const TIE_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AllocError {
    #[error("allocation needs at least one robot and one task (got N = {robots}, M = {tasks})")]
    Empty { robots: usize, tasks: usize },
    #[error("search space too large: N log2 M = {bits:.2} exceeds {MAX_SEARCH_BITS}")]
    SearchSpaceTooLarge { bits: f64 },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("QP for robot {robot}, task {task} is infeasible")]
    Infeasible { robot: usize, task: usize },
    #[error("QP for robot {robot}, task {task} hit the iteration cap")]
    NotConverged { robot: usize, task: usize },
    #[error("QP for robot {robot}, task {task}: {source}")]
    Qp {
        robot: usize,
        task: usize,
        #[source]
        source: QpError,
    },
    #[error(transparent)]
    Task(#[from] TaskError),
}

/// The `N x M` matrix of specialization values `s_ij`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpecializationState {
    robots: usize,
    tasks: usize,
    values: Vec<f64>,
    pub s_max: f64,
    pub eps_s: f64,
}

impl SpecializationState {
    pub fn new(rows: &[Vec<f64>], s_max: f64, eps_s: f64) -> Result<Self, AllocError> {
        let robots = rows.len();
        let tasks = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != tasks) {
            return Err(AllocError::Dimension("specialization rows differ in length".into()));
        }
        let values: Vec<f64> = rows.iter().flatten().copied().collect();
        if let Some(v) = values.iter().find(|v| !(0.0..=s_max).contains(*v)) {
            return Err(AllocError::Dimension(format!("specialization value {v} outside [0, {s_max}]")));
        }
        Ok(Self {
            robots,
            tasks,
            values,
            s_max,
            eps_s,
        })
    }

    pub fn uniform(robots: usize, tasks: usize, value: f64) -> Self {
        Self {
            robots,
            tasks,
            values: vec![value; robots * tasks],
            s_max: 1.0,
            eps_s: 1e-3,
        }
    }

    pub fn num_robots(&self) -> usize {
        self.robots
    }

    pub fn num_tasks(&self) -> usize {
        self.tasks
    }

    pub fn get(&self, robot: usize, task: usize) -> f64 {
        self.values[robot * self.tasks + task]
    }

    /// Stores `value` clamped to `[0, s_max]`.
    pub fn set_clamped(&mut self, robot: usize, task: usize, value: f64) {
        self.values[robot * self.tasks + task] = value.clamp(0.0, self.s_max);
    }

    pub fn row(&self, robot: usize) -> &[f64] {
        &self.values[robot * self.tasks..(robot + 1) * self.tasks]
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.robots).map(|i| self.row(i).to_vec()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalSpec {
    /// Desired fraction of robots prioritizing each task.
    pub pi_star: Vec<f64>,
    /// Diagonal of the weighting matrix `T`.
    pub task_weights: Vec<f64>,
    /// `C`, weight of the allocation mismatch.
    pub mismatch_weight: f64,
    /// `l`, weight of the specialization-scaled slack penalty.
    pub slack_weight: f64,
    pub kappa: f64,
    pub delta_max: f64,
    /// Per-axis input bound in m/s.
    pub u_max: f64,
}

impl GlobalSpec {
    /// Uniform `pi*`, identity `T` and the default weights for `tasks` tasks.
    pub fn with_defaults(tasks: usize) -> Self {
        Self {
            pi_star: vec![1.0 / tasks.max(1) as f64; tasks],
            task_weights: vec![1.0; tasks],
            mismatch_weight: 1e15,
            slack_weight: 100.0,
            kappa: 1e4,
            delta_max: 2e5,
            u_max: 0.2,
        }
    }

    /// Right-hand side of priority row `(m_row, n)` when robot prioritizes
    /// `chosen`. The row is `delta_{m_row} - delta_n / kappa <= Omega`.
    pub fn omega(&self, chosen: usize, m_row: usize) -> f64 {
        if m_row == chosen {
            0.0
        } else {
            (1.0 + 1.0 / self.kappa) * self.delta_max
        }
    }
}

/// One-hot assignment, `task_of[i] = m` iff `alpha_im = 1`. Task indices are
/// zero-based.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Assignment {
    pub task_of: Vec<usize>,
}

impl Assignment {
    pub fn new(task_of: Vec<usize>) -> Self {
        Self { task_of }
    }

    /// `alpha_ij` as 0/1.
    pub fn alpha(&self, robot: usize, task: usize) -> f64 {
        if self.task_of[robot] == task {
            1.0
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AllocationSolution {
    pub assignment: Assignment,
    pub inputs: Vec<Vec2>,
    /// `N x M` slack values of each robot's winning QP.
    pub slacks: Vec<Vec<f64>>,
    pub objective_total: f64,
    pub objective_mismatch: f64,
    pub per_robot_costs: Vec<f64>,
    /// `N x M` iteration counts of the hypothesis QPs.
    pub qp_iterations: Vec<Vec<usize>>,
}

/// Diagonal of `P_i = S_i S_i^+`: 1 where `s_im > eps_s`, else 0.
pub fn effective_projector(spec: &SpecializationState, robot: usize) -> Vec<f64> {
    spec.row(robot)
        .iter()
        .map(|&s| if s > spec.eps_s { 1.0 } else { 0.0 })
        .collect()
}

/// Specialization-discounted task distribution `(1/N) sum_i P_i alpha_i`.
pub fn pi_h(spec: &SpecializationState, assignment: &Assignment) -> Vec<f64> {
    let n = spec.num_robots();
    let mut out = vec![0.0; spec.num_tasks()];
    for (i, &m) in assignment.task_of.iter().enumerate() {
        if spec.get(i, m) > spec.eps_s {
            out[m] += 1.0;
        }
    }
    for v in &mut out {
        *v /= n as f64;
    }
    out
}

/// `C |pi* - pi_h|_T^2`.
pub fn mismatch_cost(gs: &GlobalSpec, pi: &[f64]) -> f64 {
    let sq: f64 = gs
        .pi_star
        .iter()
        .zip(pi)
        .zip(&gs.task_weights)
        .map(|((a, b), w)| w * (a - b) * (a - b))
        .sum();
    gs.mismatch_weight * sq
}

/// Per-robot QP for robot `robot` under the hypothesis that it prioritizes
/// task `chosen`.
///
/// Decision vector `z = (u_x, u_y, delta_0, ..., delta_{M-1})`. Rows, in order:
/// `M` barrier rows, `M(M-1)` priority rows for ordered pairs `(m', n)` with
/// `m' != n` (lexicographic), `M` rows `delta_j <= delta_max`, `M` rows
/// `-delta_j <= delta_max`, then `u_x <= u_max`, `-u_x <= u_max`,
/// `u_y <= u_max`, `-u_y <= u_max`.
pub fn build_robot_qp(
    robot: usize,
    chosen: usize,
    state: Vec2,
    tasks: &[TaskDef],
    spec: &SpecializationState,
    gs: &GlobalSpec,
    gamma: &GammaConfig,
) -> Result<QpProblem, TaskError> {
    let m = tasks.len();
    let nz = 2 + m;
    let mut diag = vec![2.0, 2.0];
    diag.extend(spec.row(robot).iter().map(|s| 2.0 * gs.slack_weight * s));
    let mut qp = QpProblem::new(SymMatrix::from_diagonal(&diag), vec![0.0; nz]);

    let mut row = vec![0.0; nz];
    for (j, task) in tasks.iter().enumerate() {
        let c = barrier_row(task, state, gamma)?;
        // coeff . u >= rhs - delta  <=>  -coeff . u - delta <= -rhs
        row.fill(0.0);
        row[0] = -c.coeff_u.x;
        row[1] = -c.coeff_u.y;
        row[2 + j] = -1.0;
        qp.push_row(&row, -c.rhs_base);
    }
    for mp in 0..m {
        for n in 0..m {
            if mp == n {
                continue;
            }
            row.fill(0.0);
            row[2 + mp] = 1.0;
            row[2 + n] = -1.0 / gs.kappa;
            qp.push_row(&row, gs.omega(chosen, mp));
        }
    }
    for sign in [1.0, -1.0] {
        for j in 0..m {
            row.fill(0.0);
            row[2 + j] = sign;
            qp.push_row(&row, gs.delta_max);
        }
    }
    for axis in 0..2 {
        for sign in [1.0, -1.0] {
            row.fill(0.0);
            row[axis] = sign;
            qp.push_row(&row, gs.u_max);
        }
    }
    Ok(qp)
}

/// `|u|^2 + l sum_j s_ij delta_j^2` for one robot.
pub fn robot_cost(u: Vec2, slacks: &[f64], spec_row: &[f64], slack_weight: f64) -> f64 {
    let weighted: f64 = slacks.iter().zip(spec_row).map(|(d, s)| s * d * d).sum();
    u.norm_squared() + slack_weight * weighted
}

#[derive(Debug, Clone)]
struct Hypothesis {
    u: Vec2,
    slacks: Vec<f64>,
    cost: f64,
    iterations: usize,
}

fn solve_hypothesis(
    robot: usize,
    chosen: usize,
    state: Vec2,
    tasks: &[TaskDef],
    spec: &SpecializationState,
    gs: &GlobalSpec,
    gamma: &GammaConfig,
    settings: &QpSettings,
) -> Result<Hypothesis, AllocError> {
    let qp = build_robot_qp(robot, chosen, state, tasks, spec, gs, gamma)?;
    let sol = solve_qp(&qp, settings).map_err(|source| AllocError::Qp {
        robot,
        task: chosen,
        source,
    })?;
    match sol.status {
        QpStatus::Optimal => {}
        QpStatus::Infeasible => return Err(AllocError::Infeasible { robot, task: chosen }),
        QpStatus::MaxIterations => return Err(AllocError::NotConverged { robot, task: chosen }),
    }
    let u = Vec2::new(sol.z_star[0], sol.z_star[1]);
    let slacks = sol.z_star[2..].to_vec();
    let cost = robot_cost(u, &slacks, spec.row(robot), gs.slack_weight);
    Ok(Hypothesis {
        u,
        slacks,
        cost,
        iterations: sol.iterations,
    })
}

pub fn check_search_space(robots: usize, tasks: usize) -> Result<(), AllocError> {
    let bits = robots as f64 * (tasks as f64).log2();
    if bits > MAX_SEARCH_BITS + 1e-12 {
        return Err(AllocError::SearchSpaceTooLarge { bits });
    }
    Ok(())
}

/// Visits every assignment in `{0..tasks}^robots` in lexicographic order and
/// returns the one minimizing `score`; near-ties keep the earlier one.
pub fn exhaustive_argmin<F>(robots: usize, tasks: usize, mut score: F) -> Result<(Assignment, f64), AllocError>
where
    F: FnMut(&[usize]) -> Result<f64, AllocError>,
{
    let mut task_of = vec![0; robots];
    let mut best: Option<(Vec<usize>, f64)> = None;
    loop {
        let obj = score(&task_of)?;
        let better = match &best {
            None => true,
            Some((_, b)) => obj < b - TIE_TOLERANCE * (1.0 + b.abs()),
        };
        if better {
            best = Some((task_of.clone(), obj));
        }
        // odometer increment, last robot fastest
        let mut pos = robots;
        loop {
            if pos == 0 {
                let (t, o) = best.expect("at least one assignment visited");
                return Ok((Assignment::new(t), o));
            }
            pos -= 1;
            task_of[pos] += 1;
            if task_of[pos] < tasks {
                break;
            }
            task_of[pos] = 0;
        }
    }
}

pub fn solve_allocation(
    states: &[Vec2],
    tasks: &[TaskDef],
    spec: &SpecializationState,
    gs: &GlobalSpec,
    gamma: &GammaConfig,
    settings: &QpSettings,
) -> Result<AllocationSolution, AllocError> {
    let n = states.len();
    let m = tasks.len();
    if n == 0 || m == 0 {
        return Err(AllocError::Empty { robots: n, tasks: m });
    }
    if spec.num_robots() != n || spec.num_tasks() != m {
        return Err(AllocError::Dimension(format!(
            "specialization is {}x{}, scenario has {n} robots and {m} tasks",
            spec.num_robots(),
            spec.num_tasks()
        )));
    }
    if gs.pi_star.len() != m || gs.task_weights.len() != m {
        return Err(AllocError::Dimension("pi_star and task_weights must have one entry per task".into()));
    }
    check_search_space(n, m)?;

    let table: Vec<Hypothesis> = (0..n * m)
        .into_par_iter()
        .map(|k| solve_hypothesis(k / m, k % m, states[k / m], tasks, spec, gs, gamma, settings))
        .collect::<Result<_, _>>()?;
    let q = |i: usize, t: usize| &table[i * m + t];

    let mut counts = vec![0usize; m];
    let (assignment, objective_total) = exhaustive_argmin(n, m, |task_of| {
        counts.fill(0);
        let mut energy = 0.0;
        for (i, &t) in task_of.iter().enumerate() {
            if spec.get(i, t) > spec.eps_s {
                counts[t] += 1;
            }
            energy += q(i, t).cost;
        }
        let pi: Vec<f64> = counts.iter().map(|&c| c as f64 / n as f64).collect();
        Ok(mismatch_cost(gs, &pi) + energy)
    })?;

    let objective_mismatch = mismatch_cost(gs, &pi_h(spec, &assignment));
    let winners: Vec<&Hypothesis> = assignment.task_of.iter().enumerate().map(|(i, &t)| q(i, t)).collect();
    Ok(AllocationSolution {
        inputs: winners.iter().map(|h| h.u).collect(),
        slacks: winners.iter().map(|h| h.slacks.clone()).collect(),
        objective_total,
        objective_mismatch,
        per_robot_costs: winners.iter().map(|h| h.cost).collect(),
        qp_iterations: (0..n).map(|i| (0..m).map(|t| q(i, t).iterations).collect()).collect(),
        assignment,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn example1_spec() -> SpecializationState {
        SpecializationState::new(&[vec![1.0, 0.0], vec![1.0, 1.0]], 1.0, 1e-3).unwrap()
    }

    #[test]
    fn projector_thresholds() {
        let s = example1_spec();
        assert_eq!(effective_projector(&s, 0), vec![1.0, 0.0]);
        assert_eq!(effective_projector(&s, 1), vec![1.0, 1.0]);
        let s = SpecializationState::new(&[vec![0.5, 2e-4]], 1.0, 1e-3).unwrap();
        assert_eq!(effective_projector(&s, 0), vec![1.0, 0.0]);
    }

    #[test]
    fn pi_h_example1() {
        let s = example1_spec();
        assert_eq!(pi_h(&s, &Assignment::new(vec![0, 1])), vec![0.5, 0.5]);
        assert_eq!(pi_h(&s, &Assignment::new(vec![1, 0])), vec![0.5, 0.0]);
        let s = SpecializationState::uniform(1, 2, 1.0);
        assert_eq!(pi_h(&s, &Assignment::new(vec![0])), vec![1.0, 0.0]);
    }

    #[test]
    fn omega_values() {
        let gs = GlobalSpec {
            kappa: 10.0,
            delta_max: 5.0,
            ..GlobalSpec::with_defaults(2)
        };
        assert_eq!(gs.omega(0, 0), 0.0);
        assert!((gs.omega(0, 1) - 5.5).abs() < 1e-15);
    }

    #[test]
    fn robot_qp_shape() {
        let tasks = vec![
            TaskDef::go_to_goal(0, Vec2::new(1.0, 0.0)),
            TaskDef::go_to_goal(1, Vec2::new(-1.0, 0.0)),
        ];
        let spec = SpecializationState::new(&[vec![1.0, 0.0]], 1.0, 1e-3).unwrap();
        let gs = GlobalSpec {
            kappa: 10.0,
            delta_max: 5.0,
            slack_weight: 10.0,
            ..GlobalSpec::with_defaults(2)
        };
        let qp = build_robot_qp(0, 0, Vec2::ZERO, &tasks, &spec, &gs, &GammaConfig::default()).unwrap();
        assert_eq!(qp.num_vars(), 4);
        assert_eq!(qp.num_rows(), 12);
        let diag: Vec<f64> = (0..4).map(|i| qp.hessian.get(i, i)).collect();
        assert_eq!(diag, vec![2.0, 2.0, 20.0, crate::qp::EPS_REG]);
        // priority rows follow the barrier rows: (0,1) then (1,0)
        assert_eq!(qp.ineq_rhs[2], 0.0);
        assert!((qp.ineq_rhs[3] - 5.5).abs() < 1e-15);
        assert_eq!(qp.row(2), &[0.0, 0.0, 1.0, -0.1]);
    }

    #[test]
    fn single_assignment() {
        let tasks = vec![TaskDef::go_to_goal(0, Vec2::new(0.5, 0.0))];
        let spec = SpecializationState::uniform(1, 1, 1.0);
        let gs = GlobalSpec::with_defaults(1);
        let sol = solve_allocation(&[Vec2::ZERO], &tasks, &spec, &gs, &GammaConfig::default(), &QpSettings::default())
            .unwrap();
        assert_eq!(sol.assignment.task_of, vec![0]);
        assert_eq!(sol.objective_mismatch, 0.0);
        assert!((sol.objective_total - sol.per_robot_costs[0]).abs() < 1e-12);
        // moves toward the goal
        assert!(sol.inputs[0].x > 0.0);
    }

    #[test]
    fn search_guard() {
        assert!(check_search_space(6, 6).is_ok());
        assert!(check_search_space(24, 2).is_ok());
        assert!(matches!(check_search_space(25, 2), Err(AllocError::SearchSpaceTooLarge { .. })));
        assert!(check_search_space(100, 1).is_ok());
    }

    #[test]
    fn empty_inputs_error() {
        let spec = SpecializationState::uniform(0, 0, 1.0);
        let gs = GlobalSpec::with_defaults(0);
        let r = solve_allocation(&[], &[], &spec, &gs, &GammaConfig::default(), &QpSettings::default());
        assert!(matches!(r, Err(AllocError::Empty { .. })));
    }

    #[test]
    fn infeasible_hypothesis_reports_pair() {
        // slack box too tight for a distant goal
        let tasks = vec![TaskDef::go_to_goal(0, Vec2::new(1.5, 0.0))];
        let spec = SpecializationState::uniform(1, 1, 1.0);
        let gs = GlobalSpec {
            delta_max: 0.01,
            ..GlobalSpec::with_defaults(1)
        };
        let r = solve_allocation(&[Vec2::ZERO], &tasks, &spec, &gs, &GammaConfig::default(), &QpSettings::default());
        assert_eq!(r, Err(AllocError::Infeasible { robot: 0, task: 0 }));
    }

    #[test]
    fn lexicographic_ties() {
        let (a, _) = exhaustive_argmin(2, 3, |_| Ok(1.0)).unwrap();
        assert_eq!(a.task_of, vec![0, 0]);
        let (a, o) = exhaustive_argmin(2, 2, |t| Ok(if t == [1, 0] || t == [1, 1] { 0.0 } else { 1.0 })).unwrap();
        assert_eq!(a.task_of, vec![1, 0]);
        assert_eq!(o, 0.0);
    }
}
