//! `adaptalloc` command-line front end.
//!
//! Exit codes: 0 success, 1 usage or input error, 2 the command ran but its
//! goal was not met (unfinished tasks, failed self-test cases).

use std::fmt::Write as _;
use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use adaptalloc::oracle;
use adaptalloc::scenario::{load_scenario, read_trace, write_trace, Trace};
use adaptalloc::world::{run_scenario_until, summarize, Summary};
use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "adaptalloc", version, about = "Adaptive multi-robot task allocation simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate a scenario and write its trace.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Stop early at this simulated time (seconds).
        #[arg(long)]
        until: Option<f64>,
    },
    /// Check a scenario document without running it.
    Validate {
        #[arg(long)]
        scenario: PathBuf,
    },
    /// Print metrics of a trace as JSON.
    Summarize {
        #[arg(long)]
        trace: PathBuf,
        /// Velocity threshold for disturbance occupancy (m/s). Defaults to the
        /// scenario's value stored in the trace header.
        #[arg(long)]
        eps: Option<f64>,
    },
    /// Export plot-ready CSV columns from a trace.
    PlotData {
        #[arg(long)]
        trace: PathBuf,
        #[arg(long, value_enum)]
        what: PlotKind,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the reference-oracle suites.
    Selftest {
        #[arg(long, value_enum)]
        oracle: OracleKind,
        /// Number of random cases (defaults: qp 100, miqp 20, adaptation 100).
        #[arg(long)]
        count: Option<usize>,
        #[arg(long, default_value_t = 2024)]
        seed: u64,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum PlotKind {
    Traj,
    Spec,
    Cost,
    Pih,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum OracleKind {
    Qp,
    Miqp,
    Adaptation,
}

const DEFAULT_EPS: f64 = 0.01;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn dispatch(command: Command) -> Result<ExitCode> {
    match command {
        Command::Run { scenario, out, until } => run(&scenario, &out, until),
        Command::Validate { scenario } => {
            let s = read_scenario(&scenario)?;
            for w in s.warnings() {
                eprintln!("warning: {w}");
            }
            println!(
                "{}: ok ({} robots, {} tasks, {} regions)",
                scenario.display(),
                s.robots.len(),
                s.tasks.len(),
                s.regions.len()
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Summarize { trace, eps } => {
            let t = open_trace(&trace)?;
            let eps = eps.or(t.header.scenario.as_ref().map(|s| s.diag_epsilon)).unwrap_or(DEFAULT_EPS);
            let summary = summarize(&t.records, eps)?;
            println!("{}", serde_json::to_string_pretty(&summary)?);
            Ok(ExitCode::SUCCESS)
        }
        Command::PlotData { trace, what, out } => {
            let t = open_trace(&trace)?;
            let csv = plot_csv(&t, what);
            fs::write(&out, csv).with_context(|| format!("writing {}", out.display()))?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Selftest { oracle, count, seed } => {
            let report = match oracle {
                OracleKind::Qp => oracle::qp_suite(count.unwrap_or(100), seed),
                OracleKind::Miqp => oracle::miqp_suite(count.unwrap_or(20), seed),
                OracleKind::Adaptation => oracle::accumulator_suite(count.unwrap_or(100), seed),
            };
            for f in &report.failures {
                eprintln!("FAIL {f}");
            }
            println!("{}: {} passed, {} failed", report.name, report.passed, report.failed());
            Ok(if report.ok() { ExitCode::SUCCESS } else { ExitCode::from(2) })
        }
    }
}

fn read_scenario(path: &Path) -> Result<adaptalloc::scenario::Scenario> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    load_scenario(&text).with_context(|| format!("loading {}", path.display()))
}

fn open_trace(path: &Path) -> Result<Trace> {
    let file = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    read_trace(BufReader::new(file)).with_context(|| format!("reading {}", path.display()))
}

fn run(path: &Path, out: &Path, until: Option<f64>) -> Result<ExitCode> {
    let scenario = read_scenario(path)?;
    for w in scenario.warnings() {
        eprintln!("warning: {w}");
    }
    let started = Instant::now();
    let records = run_scenario_until(&scenario, until.unwrap_or(scenario.t_final))?;
    let wall = started.elapsed().as_secs_f64();

    let mut buf = Vec::new();
    write_trace(&mut buf, Some(&scenario), &records)?;
    fs::write(out, buf).with_context(|| format!("writing {}", out.display()))?;

    let tasks = scenario.tasks.len();
    let (completed, reassignments) = match summarize(&records, scenario.diag_epsilon) {
        Ok(Summary { ref completion, reassignments, .. }) => {
            (completion.iter().filter(|c| c.is_some()).count(), reassignments)
        }
        Err(_) => (0, 0),
    };
    println!("{completed}/{tasks} tasks completed, {reassignments} reassignments, {wall:.2} s wall time");
    Ok(if completed == tasks { ExitCode::SUCCESS } else { ExitCode::from(2) })
}

/// Robot and task columns are 1-based.
fn plot_csv(trace: &Trace, what: PlotKind) -> String {
    let mut out = String::new();
    let header = match what {
        PlotKind::Traj => "k,t,robot,x,y",
        PlotKind::Spec => "k,t,robot,task,s",
        PlotKind::Cost => "k,t,robot,task,V",
        PlotKind::Pih => "k,t,task,pi_h",
    };
    out.push_str(header);
    out.push('\n');
    for rec in &trace.records {
        let (k, t) = (rec.k, rec.t);
        match what {
            PlotKind::Traj => {
                for (i, r) in rec.robots.iter().enumerate() {
                    let _ = writeln!(out, "{k},{t},{},{},{}", i + 1, r.x_act.x, r.x_act.y);
                }
            }
            PlotKind::Spec | PlotKind::Cost => {
                for (i, r) in rec.robots.iter().enumerate() {
                    let values = if matches!(what, PlotKind::Spec) { &r.spec } else { &r.cost };
                    for (j, v) in values.iter().enumerate() {
                        let _ = writeln!(out, "{k},{t},{},{},{v}", i + 1, j + 1);
                    }
                }
            }
            PlotKind::Pih => {
                for (j, v) in rec.pi_h.iter().enumerate() {
                    let _ = writeln!(out, "{k},{t},{},{v}", j + 1);
                }
            }
        }
    }
    out
}
