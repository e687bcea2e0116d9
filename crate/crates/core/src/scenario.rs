//! Scenario documents (TOML) and trace files (newline-delimited JSON).
//!
//! # Scenario schema, version 1
//!
//! Units: meters, seconds, radians. Every key except `robots[].position` and
//! `tasks[].goal` is optional.
//!
//! | key | default |
//! |-----|---------|
//! | `schema_version` | 1 |
//! | `name` | `"unnamed"` |
//! | `dt` | 0.033 |
//! | `t_final` | 30.0 |
//! | `diag_epsilon` | 0.01 (m/s, threshold for disturbance occupancy) |
//! | `bounds.min`, `bounds.max` | `[-1.6, -1.0]`, `[1.6, 1.0]` |
//! | `robots[].id` | 1-based position in the list |
//! | `robots[].class` | `"ground"` |
//! | `tasks[].id` | 1-based position in the list |
//! | `specialization.initial` | all ones |
//! | `specialization.nominal` | `specialization.initial` |
//! | `specialization.s_max`, `.eps_s` | 1.0, 1e-3 |
//! | `allocation.pi_star` | uniform `1/M` |
//! | `allocation.task_weights` | all ones |
//! | `allocation.mismatch_weight` | 1e15 |
//! | `allocation.slack_weight` | 100 |
//! | `allocation.kappa` | 10000 |
//! | `allocation.delta_max` | 2e5 |
//! | `allocation.u_max` | 0.2 |
//! | `gamma.form`, `gamma.gain` | `"linear"`, 1.0 |
//! | `adaptation.mode` | `"proportional_only"` |
//! | `adaptation.beta1`, `.beta2`, `.leak` | 1.0, 0.0, 0.0 |
//! | `qp.*` | see [`QpSettings`] |
//! | `regions[].active` | true |
//!
//! # Trace format
//!
//! First line: `{"schema_version": 1, "scenario": {...}}` with the resolved
//! scenario (or `null`). Then one [`TraceRecord`] object per line.

use std::collections::HashSet;
use std::fmt;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adaptation::{AdaptationMode, AdaptationParams};
use crate::allocator::{GlobalSpec, MAX_SEARCH_BITS};
use crate::geometry::Vec2;
use crate::qp::QpSettings;
use crate::task::{GammaConfig, TaskDef, TaskKind};
use crate::world::{Bounds, DisturbanceRegion, RobotClass, ScheduleEvent, TraceRecord};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobotSpec {
    pub id: usize,
    pub class: RobotClass,
    pub position: Vec2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptationSettings {
    pub mode: AdaptationMode,
    pub beta1: f64,
    pub beta2: f64,
    pub leak: f64,
}

/// A fully resolved scenario: every default filled in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub dt: f64,
    pub t_final: f64,
    pub diag_epsilon: f64,
    pub bounds: Bounds,
    pub robots: Vec<RobotSpec>,
    pub tasks: Vec<TaskDef>,
    pub regions: Vec<DisturbanceRegion>,
    pub schedule: Vec<ScheduleEvent>,
    pub spec_init: Vec<Vec<f64>>,
    pub s_bar: Vec<Vec<f64>>,
    pub s_max: f64,
    pub eps_s: f64,
    pub global: GlobalSpec,
    pub gamma: GammaConfig,
    pub adaptation: AdaptationSettings,
    pub qp: QpSettings,
}

impl Scenario {
    pub fn adaptation_params(&self) -> AdaptationParams {
        AdaptationParams {
            mode: self.adaptation.mode,
            beta1: self.adaptation.beta1,
            beta2: self.adaptation.beta2,
            leak: self.adaptation.leak,
            dt: self.dt,
            s_bar: self.s_bar.clone(),
        }
    }

    /// Non-fatal remarks about the configuration.
    pub fn warnings(&self) -> Vec<String> {
        self.adaptation_params().warnings()
    }

    /// Re-checks every invariant of an already built scenario.
    pub fn validate(&self) -> Result<(), ValidationError> {
        let issues = validate(self);
        if issues.is_empty() {
            Ok(())
        } else {
            Err(ValidationError { issues })
        }
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    schema_version: Option<u32>,
    name: Option<String>,
    dt: Option<f64>,
    t_final: Option<f64>,
    diag_epsilon: Option<f64>,
    bounds: Option<Bounds>,
    #[serde(default)]
    robots: Vec<RawRobot>,
    #[serde(default)]
    tasks: Vec<RawTask>,
    #[serde(default)]
    regions: Vec<DisturbanceRegion>,
    #[serde(default)]
    schedule: Vec<ScheduleEvent>,
    #[serde(default)]
    specialization: RawSpecialization,
    #[serde(default)]
    allocation: RawAllocation,
    #[serde(default)]
    gamma: GammaConfig,
    #[serde(default)]
    adaptation: RawAdaptation,
    #[serde(default)]
    qp: QpSettings,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRobot {
    id: Option<usize>,
    class: Option<RobotClass>,
    position: Vec2,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTask {
    id: Option<usize>,
    #[serde(default)]
    kind: TaskKind,
    goal: Vec2,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSpecialization {
    initial: Option<Vec<Vec<f64>>>,
    nominal: Option<Vec<Vec<f64>>>,
    s_max: Option<f64>,
    eps_s: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawAllocation {
    pi_star: Option<Vec<f64>>,
    task_weights: Option<Vec<f64>>,
    mismatch_weight: Option<f64>,
    slack_weight: Option<f64>,
    kappa: Option<f64>,
    delta_max: Option<f64>,
    u_max: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawAdaptation {
    mode: Option<AdaptationMode>,
    beta1: Option<f64>,
    beta2: Option<f64>,
    leak: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("parse error{}: {message}", line.map(|l| format!(" at line {l}")).unwrap_or_default())]
pub struct ParseError {
    pub line: Option<usize>,
    /// Includes the offending key path when the parser reports one.
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationIssue {
    pub field: String,
    pub message: String,
}

impl fmt::Display for ValidationIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

/// Every violated invariant, in document order.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidationError {
    pub issues: Vec<ValidationIssue>,
}

impl ValidationError {
    pub fn mentions(&self, field: &str) -> bool {
        self.issues.iter().any(|i| i.field.contains(field))
    }
}

impl fmt::Display for ValidationError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "scenario has {} problem(s):", self.issues.len())?;
        for issue in &self.issues {
            write!(f, "\n  {issue}")?;
        }
        Ok(())
    }
}

impl std::error::Error for ValidationError {}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LoadError {
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error(transparent)]
    Validation(#[from] ValidationError),
}

pub fn load_scenario(text: &str) -> Result<Scenario, LoadError> {
    let raw: RawScenario = toml::from_str(text).map_err(|e| ParseError {
        line: e.span().map(|s| text[..s.start.min(text.len())].matches('\n').count() + 1),
        message: e.message().to_string(),
    })?;
    let mut issues = Vec::new();
    if let Some(v) = raw.schema_version {
        if v != SCHEMA_VERSION {
            issue(&mut issues, "schema_version", format!("unsupported version {v}, expected {SCHEMA_VERSION}"));
        }
    }
    let scenario = resolve(raw);
    issues.extend(validate(&scenario));
    if issues.is_empty() {
        Ok(scenario)
    } else {
        Err(ValidationError { issues }.into())
    }
}

fn resolve(raw: RawScenario) -> Scenario {
    let n = raw.robots.len();
    let m = raw.tasks.len();
    let spec_init = raw.specialization.initial.unwrap_or_else(|| vec![vec![1.0; m]; n]);
    let defaults = GlobalSpec::with_defaults(m);
    let a = raw.allocation;
    Scenario {
        name: raw.name.unwrap_or_else(|| "unnamed".to_string()),
        dt: raw.dt.unwrap_or(0.033),
        t_final: raw.t_final.unwrap_or(30.0),
        diag_epsilon: raw.diag_epsilon.unwrap_or(0.01),
        bounds: raw.bounds.unwrap_or_default(),
        robots: raw
            .robots
            .into_iter()
            .enumerate()
            .map(|(i, r)| RobotSpec {
                id: r.id.unwrap_or(i + 1),
                class: r.class.unwrap_or(RobotClass::Ground),
                position: r.position,
            })
            .collect(),
        tasks: raw
            .tasks
            .into_iter()
            .enumerate()
            .map(|(j, t)| TaskDef {
                id: t.id.unwrap_or(j + 1),
                kind: t.kind,
                goal: t.goal,
            })
            .collect(),
        regions: raw.regions,
        schedule: raw.schedule,
        s_bar: raw.specialization.nominal.unwrap_or_else(|| spec_init.clone()),
        spec_init,
        s_max: raw.specialization.s_max.unwrap_or(1.0),
        eps_s: raw.specialization.eps_s.unwrap_or(1e-3),
        global: GlobalSpec {
            pi_star: a.pi_star.unwrap_or(defaults.pi_star),
            task_weights: a.task_weights.unwrap_or(defaults.task_weights),
            mismatch_weight: a.mismatch_weight.unwrap_or(defaults.mismatch_weight),
            slack_weight: a.slack_weight.unwrap_or(defaults.slack_weight),
            kappa: a.kappa.unwrap_or(defaults.kappa),
            delta_max: a.delta_max.unwrap_or(defaults.delta_max),
            u_max: a.u_max.unwrap_or(defaults.u_max),
        },
        gamma: raw.gamma,
        adaptation: AdaptationSettings {
            mode: raw.adaptation.mode.unwrap_or_default(),
            beta1: raw.adaptation.beta1.unwrap_or(1.0),
            beta2: raw.adaptation.beta2.unwrap_or(0.0),
            leak: raw.adaptation.leak.unwrap_or(0.0),
        },
        qp: raw.qp,
    }
}

fn issue(issues: &mut Vec<ValidationIssue>, field: impl Into<String>, message: impl Into<String>) {
    issues.push(ValidationIssue {
        field: field.into(),
        message: message.into(),
    });
}

fn check_positive(issues: &mut Vec<ValidationIssue>, field: &str, v: f64) {
    if !(v.is_finite() && v > 0.0) {
        issue(issues, field, format!("must be a positive finite number (got {v})"));
    }
}

fn check_matrix(issues: &mut Vec<ValidationIssue>, field: &str, mat: &[Vec<f64>], n: usize, m: usize, s_max: f64) {
    if mat.len() != n || mat.iter().any(|r| r.len() != m) {
        let cols = mat.first().map_or(0, Vec::len);
        issue(issues, field, format!("must be {n}x{m} (robots x tasks), got {}x{cols}", mat.len()));
        return;
    }
    for (i, row) in mat.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            if !(0.0..=s_max).contains(&v) {
                issue(issues, format!("{field}[{i}][{j}]"), format!("{v} outside [0, s_max = {s_max}]"));
            }
        }
    }
}

fn validate(s: &Scenario) -> Vec<ValidationIssue> {
    let mut out = Vec::new();
    let issues = &mut out;
    let n = s.robots.len();
    let m = s.tasks.len();

    check_positive(issues, "dt", s.dt);
    if !(s.t_final.is_finite() && s.t_final >= 0.0) {
        issue(issues, "t_final", format!("must be finite and non-negative (got {})", s.t_final));
    }
    if !(s.diag_epsilon.is_finite() && s.diag_epsilon >= 0.0) {
        issue(issues, "diag_epsilon", format!("must be finite and non-negative (got {})", s.diag_epsilon));
    }
    let b = s.bounds;
    let bounds_ok = b.min.is_finite() && b.max.is_finite() && b.min.x < b.max.x && b.min.y < b.max.y;
    if !bounds_ok {
        issue(issues, "bounds", "min must be finite and componentwise below max");
    }

    let mut ids = HashSet::new();
    for (i, r) in s.robots.iter().enumerate() {
        if !ids.insert(r.id) {
            issue(issues, format!("robots[{i}].id"), format!("duplicate robot id {}", r.id));
        }
        if !r.position.is_finite() || (bounds_ok && !b.contains(r.position)) {
            issue(issues, format!("robots[{i}].position"), "must be finite and inside bounds");
        }
    }
    let mut ids = HashSet::new();
    for (j, t) in s.tasks.iter().enumerate() {
        if !ids.insert(t.id) {
            issue(issues, format!("tasks[{j}].id"), format!("duplicate task id {}", t.id));
        }
        if !t.goal.is_finite() || (bounds_ok && !b.contains(t.goal)) {
            issue(issues, format!("tasks[{j}].goal"), "must be finite and inside bounds");
        }
    }

    check_positive(issues, "specialization.s_max", s.s_max);
    if !(s.eps_s.is_finite() && s.eps_s >= 0.0 && s.eps_s < s.s_max) {
        issue(issues, "specialization.eps_s", format!("must lie in [0, s_max) (got {})", s.eps_s));
    }
    check_matrix(issues, "specialization.initial", &s.spec_init, n, m, s.s_max);
    check_matrix(issues, "specialization.nominal", &s.s_bar, n, m, s.s_max);

    let g = &s.global;
    if g.pi_star.len() != m {
        issue(issues, "allocation.pi_star", format!("must have {m} entries (one per task), got {}", g.pi_star.len()));
    } else {
        if g.pi_star.iter().any(|p| !(0.0..=1.0).contains(p)) {
            issue(issues, "allocation.pi_star", "entries must lie in [0, 1]");
        }
        let sum: f64 = g.pi_star.iter().sum();
        if m > 0 && sum > 1.0 + 1e-9 {
            issue(issues, "allocation.pi_star", format!("entries sum to {sum}, more than 1"));
        }
    }
    if g.task_weights.len() != m {
        issue(
            issues,
            "allocation.task_weights",
            format!("must have {m} entries (one per task), got {}", g.task_weights.len()),
        );
    } else if g.task_weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
        issue(issues, "allocation.task_weights", "entries must be finite and non-negative");
    }
    if !(g.mismatch_weight.is_finite() && g.mismatch_weight >= 0.0) {
        issue(issues, "allocation.mismatch_weight", "must be finite and non-negative");
    }
    check_positive(issues, "allocation.slack_weight", g.slack_weight);
    if !(g.kappa.is_finite() && g.kappa > 1.0) {
        issue(issues, "allocation.kappa", format!("must be greater than 1 (got {})", g.kappa));
    }
    check_positive(issues, "allocation.delta_max", g.delta_max);
    check_positive(issues, "allocation.u_max", g.u_max);
    let bits = n as f64 * (m as f64).log2();
    if m > 0 && bits > MAX_SEARCH_BITS {
        issue(
            issues,
            "robots",
            format!("N log2 M = {bits:.2} exceeds the exhaustive-search limit of {MAX_SEARCH_BITS}"),
        );
    }

    check_positive(issues, "gamma.gain", s.gamma.gain);

    let a = &s.adaptation;
    check_positive(issues, "adaptation.beta1", a.beta1);
    if !(a.beta2.is_finite() && a.beta2 >= 0.0) {
        issue(issues, "adaptation.beta2", "must be finite and non-negative");
    } else if a.mode == AdaptationMode::WithIntegral && a.beta2 <= 0.0 {
        issue(issues, "adaptation.beta2", "must be positive in with_integral mode");
    }
    if !(0.0..1.0).contains(&a.leak) {
        issue(issues, "adaptation.leak", format!("must lie in [0, 1) (got {})", a.leak));
    }

    check_positive(issues, "qp.tol_primal", s.qp.tol_primal);
    check_positive(issues, "qp.tol_dual", s.qp.tol_dual);
    check_positive(issues, "qp.tol_obj", s.qp.tol_obj);
    if s.qp.max_iter == 0 {
        issue(issues, "qp.max_iter", "must be at least 1");
    }

    let mut names = HashSet::new();
    for (r, region) in s.regions.iter().enumerate() {
        if !names.insert(region.name.as_str()) {
            issue(issues, format!("regions[{r}].name"), format!("duplicate region name {:?}", region.name));
        }
        for p in region.geometry.problems() {
            issue(issues, format!("regions[{r}].geometry"), p);
        }
        if !(0.0..=1.0).contains(&region.mobility) {
            issue(issues, format!("regions[{r}].mobility"), format!("must lie in [0, 1] (got {})", region.mobility));
        }
    }
    for (e, ev) in s.schedule.iter().enumerate() {
        if !(ev.time.is_finite() && ev.time >= 0.0 && ev.time <= s.t_final) {
            issue(
                issues,
                format!("schedule[{e}].time"),
                format!("{} outside [0, t_final = {}]", ev.time, s.t_final),
            );
        }
        if !names.contains(ev.region.as_str()) {
            issue(issues, format!("schedule[{e}].region"), format!("no region named {:?}", ev.region));
        }
        if ev.active.is_none() && ev.affected.is_none() && ev.mobility.is_none() {
            issue(issues, format!("schedule[{e}]"), "event changes nothing (set active, affected or mobility)");
        }
        if let Some(mu) = ev.mobility {
            if !(0.0..=1.0).contains(&mu) {
                issue(issues, format!("schedule[{e}].mobility"), format!("must lie in [0, 1] (got {mu})"));
            }
        }
    }
    out
}

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("trace I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("trace line {line}: {source}")]
    Json {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("trace is missing its header line")]
    MissingHeader,
    #[error("unsupported trace schema version {0}, expected {SCHEMA_VERSION}")]
    SchemaVersion(u32),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub schema_version: u32,
    pub scenario: Option<Scenario>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub header: TraceHeader,
    pub records: Vec<TraceRecord>,
}

pub fn write_trace<W: Write>(mut sink: W, scenario: Option<&Scenario>, records: &[TraceRecord]) -> Result<(), TraceError> {
    let header = TraceHeader {
        schema_version: SCHEMA_VERSION,
        scenario: scenario.cloned(),
    };
    sink.write_all(json_line(1, &header)?.as_bytes())?;
    for (k, r) in records.iter().enumerate() {
        sink.write_all(json_line(k + 2, r)?.as_bytes())?;
    }
    sink.flush()?;
    Ok(())
}

fn json_line<T: Serialize>(line: usize, value: &T) -> Result<String, TraceError> {
    let mut s = serde_json::to_string(value).map_err(|source| TraceError::Json { line, source })?;
    s.push('\n');
    Ok(s)
}

pub fn read_trace<R: BufRead>(source: R) -> Result<Trace, TraceError> {
    let mut lines = source.lines().enumerate().filter(|(_, l)| !matches!(l, Ok(s) if s.trim().is_empty()));
    let (_, first) = lines.next().ok_or(TraceError::MissingHeader)?;
    let first = first?;
    #[derive(Deserialize)]
    struct Version {
        schema_version: u32,
    }
    let v: Version = serde_json::from_str(&first).map_err(|source| TraceError::Json { line: 1, source })?;
    if v.schema_version != SCHEMA_VERSION {
        return Err(TraceError::SchemaVersion(v.schema_version));
    }
    let header: TraceHeader = serde_json::from_str(&first).map_err(|source| TraceError::Json { line: 1, source })?;
    let mut records = Vec::new();
    for (i, line) in lines {
        let line = line?;
        records.push(serde_json::from_str(&line).map_err(|source| TraceError::Json { line: i + 1, source })?);
    }
    Ok(Trace { header, records })
}

/// Scenario documents shipped with the library.
pub mod bundled {
    pub const EXAMPLE1: &str = include_str!("../scenarios/example1.toml");
    pub const EXAMPLE2: &str = include_str!("../scenarios/example2.toml");
    pub const EXAMPLE3: &str = include_str!("../scenarios/example3.toml");
    pub const EXPERIMENT_A: &str = include_str!("../scenarios/experiment_a.toml");
    pub const EXPERIMENT_B: &str = include_str!("../scenarios/experiment_b.toml");
    pub const NOMINAL: &str = include_str!("../scenarios/nominal.toml");

    pub const ALL: [(&str, &str); 6] = [
        ("example1", EXAMPLE1),
        ("example2", EXAMPLE2),
        ("example3", EXAMPLE3),
        ("experiment_a", EXPERIMENT_A),
        ("experiment_b", EXPERIMENT_B),
        ("nominal", NOMINAL),
    ];

    pub fn get(name: &str) -> Option<&'static str> {
        ALL.iter().find(|(n, _)| *n == name).map(|(_, text)| *text)
    }
}
