//! Planar world with disturbed robot dynamics and the closed control loop.

use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adaptation::{
    disturbance_occupancy, simulate_nominal_step, update_specialization, AdaptationParams, DeviationMatrix,
    IntegralAccumulator,
};
use crate::allocator::{solve_allocation, AllocError, Assignment, SpecializationState};
use crate::geometry::Vec2;
use crate::scenario::Scenario;
use crate::task::{cost, TaskError};

/// A task counts as done once its assigned robot has `V` below this (m^2),
/// i.e. is within 5 cm of the goal.
pub const COMPLETION_COST: f64 = 2.5e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RobotClass {
    Ground,
    Aerial,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RobotModel {
    pub id: usize,
    pub class: RobotClass,
    pub x_act: Vec2,
    pub x_sim: Vec2,
    pub u_last: Vec2,
}

/// Axis-aligned world rectangle; positions are clipped to it after each step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bounds {
    pub min: Vec2,
    pub max: Vec2,
}

impl Default for Bounds {
    fn default() -> Self {
        Self {
            min: Vec2::new(-1.6, -1.0),
            max: Vec2::new(1.6, 1.0),
        }
    }
}

impl Bounds {
    pub fn contains(&self, p: Vec2) -> bool {
        p.x >= self.min.x && p.x <= self.max.x && p.y >= self.min.y && p.y <= self.max.y
    }

    pub fn clip(&self, p: Vec2) -> Vec2 {
        Vec2::new(p.x.clamp(self.min.x, self.max.x), p.y.clamp(self.min.y, self.max.y))
    }
}

/// Region shapes. Angles are in radians, measured counter-clockwise from +x.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case", deny_unknown_fields)]
pub enum Geometry {
    Disk {
        center: Vec2,
        radius: f64,
    },
    Annulus {
        center: Vec2,
        r_in: f64,
        r_out: f64,
    },
    /// Annulus that only acts on robots whose commanded heading lies in
    /// `[angle_from, angle_to]` (wrapping through pi is allowed).
    AnnularSector {
        center: Vec2,
        r_in: f64,
        r_out: f64,
        angle_from: f64,
        angle_to: f64,
    },
    Rect {
        min: Vec2,
        max: Vec2,
    },
}

fn heading_in(heading: f64, from: f64, to: f64) -> bool {
    let span = to - from;
    if span >= TAU {
        return true;
    }
    (heading - from).rem_euclid(TAU) <= span.rem_euclid(TAU)
}

impl Geometry {
    /// Whether the region acts on a robot at `p` commanding `u`.
    pub fn applies(&self, p: Vec2, u: Vec2) -> bool {
        match *self {
            Geometry::Disk { center, radius } => (p - center).norm() <= radius,
            Geometry::Annulus { center, r_in, r_out } => {
                let r = (p - center).norm();
                r >= r_in && r <= r_out
            }
            Geometry::AnnularSector {
                center,
                r_in,
                r_out,
                angle_from,
                angle_to,
            } => {
                let r = (p - center).norm();
                r >= r_in && r <= r_out && u != Vec2::ZERO && heading_in(u.angle(), angle_from, angle_to)
            }
            Geometry::Rect { min, max } => p.x >= min.x && p.x <= max.x && p.y >= min.y && p.y <= max.y,
        }
    }

    /// Human-readable reasons this geometry is malformed.
    pub fn problems(&self) -> Vec<String> {
        let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
        let mut out = Vec::new();
        match *self {
            Geometry::Disk { center, radius } => {
                if !(finite(&[center.x, center.y, radius]) && radius > 0.0) {
                    out.push("radius must be positive and all values finite".to_string());
                }
            }
            Geometry::Annulus { center, r_in, r_out }
            | Geometry::AnnularSector {
                center, r_in, r_out, ..
            } => {
                if !finite(&[center.x, center.y, r_in, r_out]) {
                    out.push("center and radii must be finite".to_string());
                } else if !(r_in >= 0.0 && r_in < r_out) {
                    out.push(format!("need 0 <= r_in < r_out (got r_in = {r_in}, r_out = {r_out})"));
                }
                if let Geometry::AnnularSector {
                    angle_from, angle_to, ..
                } = *self
                {
                    if !(finite(&[angle_from, angle_to]) && angle_from <= angle_to) {
                        out.push(format!(
                            "need finite angle_from <= angle_to (got {angle_from}, {angle_to})"
                        ));
                    }
                }
            }
            Geometry::Rect { min, max } => {
                if !(finite(&[min.x, min.y, max.x, max.y]) && min.x < max.x && min.y < max.y) {
                    out.push("rect min must be componentwise below max".to_string());
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DisturbanceRegion {
    pub name: String,
    pub geometry: Geometry,
    pub affected: Vec<RobotClass>,
    /// Velocity scale inside the region, 0 blocks motion entirely.
    pub mobility: f64,
    #[serde(default = "default_true")]
    pub active: bool,
}

fn default_true() -> bool {
    true
}

/// Change to a named region taking effect at `time`. Unset fields are left
/// alone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleEvent {
    pub time: f64,
    pub region: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub active: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub affected: Option<Vec<RobotClass>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mobility: Option<f64>,
}

impl ScheduleEvent {
    /// First step index at which the event is in force.
    pub fn step(&self, dt: f64) -> usize {
        // guard against k*dt landing a hair above an exact multiple
        (self.time / dt - 1e-9).ceil().max(0.0) as usize
    }

    fn apply(&self, regions: &mut [DisturbanceRegion]) {
        for r in regions.iter_mut().filter(|r| r.name == self.region) {
            if let Some(a) = self.active {
                r.active = a;
            }
            if let Some(c) = &self.affected {
                r.affected = c.clone();
            }
            if let Some(m) = self.mobility {
                r.mobility = m;
            }
        }
    }
}

/// Velocity scale for a robot of `class` at `x` commanding `u`: the minimum
/// mobility over active regions that affect the class and contain the
/// point the robot is about to move to.
pub fn effective_mobility(class: RobotClass, x: Vec2, u: Vec2, dt: f64, regions: &[DisturbanceRegion]) -> f64 {
    let target = x + u * dt;
    regions
        .iter()
        .filter(|r| r.active && r.affected.contains(&class) && r.geometry.applies(target, u))
        .map(|r| r.mobility)
        .fold(1.0, f64::min)
}

pub fn actual_step(robot: &RobotModel, u: Vec2, regions: &[DisturbanceRegion], dt: f64) -> Vec2 {
    let mu = effective_mobility(robot.class, robot.x_act, u, dt, regions);
    robot.x_act + u * (mu * dt)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobotRecord {
    pub x_act: Vec2,
    pub x_sim: Vec2,
    pub u: Vec2,
    /// Zero-based index of the prioritized task.
    pub task: usize,
    /// Slack row of the solved QP.
    pub slack: Vec<f64>,
    /// Specialization row used for this step's allocation.
    pub spec: Vec<f64>,
    /// `V_j(x_act)` for every task.
    pub cost: Vec<f64>,
    /// `V_j(x_sim) - V_j(x_act)` for every task.
    pub deviation: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub k: usize,
    pub t: f64,
    pub robots: Vec<RobotRecord>,
    pub pi_h: Vec<f64>,
    pub objective_total: f64,
    /// Assignment differs from the previous step's.
    pub reassigned: bool,
    /// Active-set iterations summed over all hypothesis QPs of the step.
    pub qp_iterations: usize,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("step {step}: {error}")]
    Allocation { step: usize, error: AllocError },
    #[error("step {step}: {error}")]
    Task { step: usize, error: TaskError },
    #[error("invalid specialization matrix: {0}")]
    Spec(AllocError),
}

/// Number of integration steps for a horizon; the trace holds one more record.
pub fn num_steps(t_final: f64, dt: f64) -> usize {
    (t_final / dt - 1e-9).ceil().max(0.0) as usize
}

pub fn run_scenario(scenario: &Scenario) -> Result<Vec<TraceRecord>, SimError> {
    run_scenario_until(scenario, scenario.t_final)
}

/// Runs the closed loop up to `min(t_until, t_final)`.
///
/// Each step: measure positions, predict them from the previous command,
/// update the specialization from the deviation, solve the allocation with
/// the new specialization, then apply the commands through the disturbed
/// dynamics.
pub fn run_scenario_until(scenario: &Scenario, t_until: f64) -> Result<Vec<TraceRecord>, SimError> {
    let n = scenario.robots.len();
    let m = scenario.tasks.len();
    if n == 0 || m == 0 {
        return Ok(Vec::new());
    }
    let dt = scenario.dt;
    let steps = num_steps(t_until.min(scenario.t_final), dt);
    let tasks = &scenario.tasks;
    let params: AdaptationParams = scenario.adaptation_params();

    let mut robots: Vec<RobotModel> = scenario
        .robots
        .iter()
        .map(|r| RobotModel {
            id: r.id,
            class: r.class,
            x_act: r.position,
            x_sim: r.position,
            u_last: Vec2::ZERO,
        })
        .collect();
    let mut regions = scenario.regions.clone();
    let mut events: Vec<(usize, &ScheduleEvent)> =
        scenario.schedule.iter().map(|e| (e.step(dt), e)).collect();
    events.sort_by_key(|(k, _)| *k);
    let mut next_event = 0;

    let mut spec = SpecializationState::new(&scenario.spec_init, scenario.s_max, scenario.eps_s).map_err(SimError::Spec)?;
    let mut acc = IntegralAccumulator::zeros(n, m);
    let mut prev: Option<Assignment> = None;
    let mut trace = Vec::with_capacity(steps + 1);

    for k in 0..=steps {
        while next_event < events.len() && events[next_event].0 <= k {
            events[next_event].1.apply(&mut regions);
            next_event += 1;
        }
        let x_act: Vec<Vec2> = robots.iter().map(|r| r.x_act).collect();
        let x_sim: Vec<Vec2> = robots.iter().map(|r| r.x_sim).collect();
        let deviation =
            DeviationMatrix::measure(tasks, &x_sim, &x_act).map_err(|error| SimError::Task { step: k, error })?;
        if let Some(a) = &prev {
            spec = update_specialization(&spec, a, &deviation, &params, &mut acc);
        }

        let sol = solve_allocation(&x_act, tasks, &spec, &scenario.global, &scenario.gamma, &scenario.qp)
            .map_err(|error| SimError::Allocation { step: k, error })?;

        let mut robot_records = Vec::with_capacity(n);
        for (i, r) in robots.iter().enumerate() {
            let costs = tasks
                .iter()
                .map(|t| cost(t, r.x_act).map(|c| c.value))
                .collect::<Result<Vec<f64>, _>>()
                .map_err(|error| SimError::Task { step: k, error })?;
            robot_records.push(RobotRecord {
                x_act: r.x_act,
                x_sim: r.x_sim,
                u: sol.inputs[i],
                task: sol.assignment.task_of[i],
                slack: sol.slacks[i].clone(),
                spec: spec.row(i).to_vec(),
                cost: costs,
                deviation: deviation.values[i].clone(),
            });
        }
        trace.push(TraceRecord {
            k,
            t: k as f64 * dt,
            robots: robot_records,
            pi_h: crate::allocator::pi_h(&spec, &sol.assignment),
            objective_total: sol.objective_total,
            reassigned: prev.as_ref().is_some_and(|p| *p != sol.assignment),
            qp_iterations: sol.qp_iterations.iter().flatten().sum(),
        });

        if k < steps {
            for (r, &u) in robots.iter_mut().zip(&sol.inputs) {
                let next = actual_step(r, u, &regions, dt);
                r.x_sim = simulate_nominal_step(r.x_act, u, dt);
                r.x_act = scenario.bounds.clip(next);
                r.u_last = u;
            }
        }
        prev = Some(sol.assignment);
    }
    Ok(trace)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Completion {
    pub k: usize,
    pub t: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub records: usize,
    /// First step at which each task's assigned robot was within reach.
    pub completion: Vec<Option<Completion>>,
    pub reassignments: usize,
    pub final_spec: Vec<Vec<f64>>,
    pub final_assignment: Vec<usize>,
    /// Distance of each robot to its assigned goal in the last record.
    pub final_distance: Vec<f64>,
    /// Absent when the trace has a single record.
    pub disturbance_occupancy: Option<f64>,
}

impl Summary {
    pub fn tasks_completed(&self) -> usize {
        self.completion.iter().filter(|c| c.is_some()).count()
    }

    pub fn all_completed(&self) -> bool {
        self.completion.iter().all(Option::is_some)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SummaryError {
    #[error("cannot summarize an empty trace")]
    EmptyTrace,
}

/// Whether task `task` has an assigned robot within reach in `record`.
pub fn task_done(record: &TraceRecord, task: usize) -> bool {
    record.robots.iter().any(|r| r.task == task && r.cost[task] < COMPLETION_COST)
}

pub fn summarize(trace: &[TraceRecord], eps: f64) -> Result<Summary, SummaryError> {
    let last = trace.last().ok_or(SummaryError::EmptyTrace)?;
    let tasks = last.robots.first().map_or(0, |r| r.cost.len());
    let completion = (0..tasks)
        .map(|m| {
            trace
                .iter()
                .find(|rec| task_done(rec, m))
                .map(|rec| Completion { k: rec.k, t: rec.t })
        })
        .collect();
    Ok(Summary {
        records: trace.len(),
        completion,
        reassignments: trace.iter().filter(|r| r.reassigned).count(),
        final_spec: last.robots.iter().map(|r| r.spec.clone()).collect(),
        final_assignment: last.robots.iter().map(|r| r.task).collect(),
        final_distance: last.robots.iter().map(|r| r.cost[r.task].sqrt()).collect(),
        disturbance_occupancy: disturbance_occupancy(trace, eps).ok(),
    })
}
