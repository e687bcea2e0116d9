//! Go-to-goal tasks encoded as quadratic costs, and the control barrier
//! function rows derived from them.
//!
//! A robot with single-integrator dynamics `x' = u` executes task `j` by
//! keeping `h_j = -V_j` inside the CBF condition
//!
//! ```text
//!     L_f h + L_g h u >= -gamma(h) - delta
//! ```
//!
//! With `f = 0` and `g = I` this collapses to `-grad V . u >= -gamma(-V) - delta`.
//! The cost function is the extension point for other task kinds; only the
//! quadratic go-to-goal cost is provided.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Vec2;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TaskError {
    #[error("non-finite state ({0}, {1})")]
    NonFiniteState(f64, f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    #[default]
    GoToGoal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskDef {
    pub id: usize,
    #[serde(default)]
    pub kind: TaskKind,
    pub goal: Vec2,
}

impl TaskDef {
    pub fn go_to_goal(id: usize, goal: Vec2) -> Self {
        Self {
            id,
            kind: TaskKind::GoToGoal,
            goal,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum GammaForm {
    #[default]
    Linear,
    Cubic,
}

/// Extended class-K function `gamma` used in the barrier condition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GammaConfig {
    pub form: GammaForm,
    /// Gain in 1/s. Must be positive.
    pub gain: f64,
}

impl Default for GammaConfig {
    fn default() -> Self {
        Self {
            form: GammaForm::Linear,
            gain: 1.0,
        }
    }
}

impl GammaConfig {
    pub fn linear(gain: f64) -> Self {
        Self {
            form: GammaForm::Linear,
            gain,
        }
    }

    pub fn cubic(gain: f64) -> Self {
        Self {
            form: GammaForm::Cubic,
            gain,
        }
    }

    pub fn eval(&self, h: f64) -> f64 {
        match self.form {
            GammaForm::Linear => self.gain * h,
            GammaForm::Cubic => self.gain * h * h * h,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostEval {
    pub value: f64,
    pub gradient: Vec2,
}

/// One barrier constraint in the form `coeff_u . u >= rhs_base - delta`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstraintRow {
    pub coeff_u: Vec2,
    pub rhs_base: f64,
}

impl ConstraintRow {
    /// Amount by which `(u, delta)` violates the row; non-positive when satisfied.
    pub fn violation(&self, u: Vec2, delta: f64) -> f64 {
        self.rhs_base - delta - self.coeff_u.dot(u)
    }
}

/// Quadratic go-to-goal cost `V = |x - goal|^2` and its gradient.
pub fn cost(task: &TaskDef, state: Vec2) -> Result<CostEval, TaskError> {
    if !state.is_finite() {
        return Err(TaskError::NonFiniteState(state.x, state.y));
    }
    let e = state - task.goal;
    Ok(CostEval {
        value: e.norm_squared(),
        gradient: 2.0 * e,
    })
}

/// Barrier row for `h = -V` under single-integrator dynamics.
pub fn barrier_row(task: &TaskDef, state: Vec2, gamma: &GammaConfig) -> Result<ConstraintRow, TaskError> {
    let c = cost(task, state)?;
    // L_f h = 0, L_g h = -grad V
    Ok(ConstraintRow {
        coeff_u: -c.gradient,
        rhs_base: -gamma.eval(-c.value),
    })
}
