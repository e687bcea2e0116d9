//! Online specialization update from the gap between nominal and actual
//! progress.
//!
//! After each step the nominal single-integrator prediction `x_sim` is
//! compared with the measured state. `dV_ij = V_ij(x_sim) - V_ij(x_act)` is
//! negative when the robot made less progress on task `j` than commanded, and
//! the specialization of the task it was working on drops accordingly:
//!
//! ```text
//!   s_ij <- clamp(s_ij + beta1 alpha_ij dV_ij + beta2 acc_ij, 0, s_max)
//!   acc_ij = sum_l (s_bar_ij - s_ij[l]) dt
//! ```

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::allocator::{Assignment, SpecializationState};
use crate::geometry::Vec2;
use crate::task::{cost, TaskDef, TaskError};
use crate::world::TraceRecord;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AdaptationError {
    #[error("trace needs at least two records to measure transitions")]
    TraceTooShort,
    #[error("non-positive time step between records {0} and {1}")]
    BadTimeStep(usize, usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AdaptationMode {
    #[default]
    ProportionalOnly,
    WithIntegral,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptationParams {
    pub mode: AdaptationMode,
    pub beta1: f64,
    pub beta2: f64,
    /// Fraction of the accumulator forgotten each step; 0 keeps the plain sum.
    pub leak: f64,
    pub dt: f64,
    /// Nominal specialization `s_bar`, `N x M`.
    pub s_bar: Vec<Vec<f64>>,
}

impl AdaptationParams {
    /// Soft checks. The integral term is meant to be slower than the
    /// proportional one.
    pub fn warnings(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.mode == AdaptationMode::WithIntegral && self.beta1 < 10.0 * self.beta2 {
            out.push(format!(
                "adaptation.beta1 ({}) is less than 10 x adaptation.beta2 ({}); the integral term may dominate",
                self.beta1, self.beta2
            ));
        }
        out
    }
}

/// Running `sum (s_bar - s) dt` per robot/task pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntegralAccumulator {
    tasks: usize,
    values: Vec<f64>,
}

impl IntegralAccumulator {
    pub fn zeros(robots: usize, tasks: usize) -> Self {
        Self {
            tasks,
            values: vec![0.0; robots * tasks],
        }
    }

    pub fn get(&self, robot: usize, task: usize) -> f64 {
        self.values[robot * self.tasks + task]
    }

    fn slot(&mut self, robot: usize, task: usize) -> &mut f64 {
        &mut self.values[robot * self.tasks + task]
    }
}

/// `dV_ij` for every robot/task pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviationMatrix {
    pub values: Vec<Vec<f64>>,
}

impl DeviationMatrix {
    pub fn zeros(robots: usize, tasks: usize) -> Self {
        Self {
            values: vec![vec![0.0; tasks]; robots],
        }
    }

    pub fn measure(tasks: &[TaskDef], x_sim: &[Vec2], x_act: &[Vec2]) -> Result<Self, TaskError> {
        let values = x_sim
            .iter()
            .zip(x_act)
            .map(|(&s, &a)| tasks.iter().map(|t| delta_v(t, s, a)).collect())
            .collect::<Result<_, _>>()?;
        Ok(Self { values })
    }

    pub fn get(&self, robot: usize, task: usize) -> f64 {
        self.values[robot][task]
    }
}

/// Where the robot would be after `dt` with no disturbance.
pub fn simulate_nominal_step(x_prev: Vec2, u_prev: Vec2, dt: f64) -> Vec2 {
    x_prev + u_prev * dt
}

pub fn delta_v(task: &TaskDef, x_sim: Vec2, x_act: Vec2) -> Result<f64, TaskError> {
    Ok(cost(task, x_sim)?.value - cost(task, x_act)?.value)
}

/// One adaptation step. `assignment` is the assignment under which the
/// measured deviation was produced.
pub fn update_specialization(
    spec: &SpecializationState,
    assignment: &Assignment,
    deviation: &DeviationMatrix,
    params: &AdaptationParams,
    acc: &mut IntegralAccumulator,
) -> SpecializationState {
    let mut next = spec.clone();
    for i in 0..spec.num_robots() {
        for j in 0..spec.num_tasks() {
            let s = spec.get(i, j);
            let mut raw = s + params.beta1 * assignment.alpha(i, j) * deviation.get(i, j);
            if params.mode == AdaptationMode::WithIntegral {
                let a = acc.slot(i, j);
                *a += (params.s_bar[i][j] - s) * params.dt;
                *a *= 1.0 - params.leak;
                raw += params.beta2 * *a;
            }
            next.set_clamped(i, j, raw);
        }
    }
    next
}

/// Fraction of robot-steps whose realized velocity differs from the
/// commanded one by more than `eps`.
pub fn disturbance_occupancy(trace: &[TraceRecord], eps: f64) -> Result<f64, AdaptationError> {
    if trace.len() < 2 {
        return Err(AdaptationError::TraceTooShort);
    }
    let robots = trace[0].robots.len();
    if robots == 0 {
        return Ok(0.0);
    }
    let mut hits = 0usize;
    for (k, pair) in trace.windows(2).enumerate() {
        let dt = pair[1].t - pair[0].t;
        if !(dt > 0.0) {
            return Err(AdaptationError::BadTimeStep(k, k + 1));
        }
        for (prev, next) in pair[0].robots.iter().zip(&pair[1].robots) {
            let realized = (next.x_act - prev.x_act) * (1.0 / dt);
            if (realized - prev.u).norm() > eps {
                hits += 1;
            }
        }
    }
    Ok(hits as f64 / (robots * (trace.len() - 1)) as f64)
}
