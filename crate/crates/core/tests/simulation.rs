use adaptalloc::scenario::{bundled, load_scenario};
use adaptalloc::world::{num_steps, run_scenario, run_scenario_until, summarize, SummaryError};

#[test]
fn example1_reaches_both_goals_without_swapping() {
    let s = load_scenario(bundled::EXAMPLE1).unwrap();
    let trace = run_scenario(&s).unwrap();
    assert_eq!(trace.len(), num_steps(s.t_final, s.dt) + 1);
    let summary = summarize(&trace, s.diag_epsilon).unwrap();
    assert_eq!(summary.reassignments, 0);
    assert_eq!(summary.final_assignment, vec![0, 1]);
    for d in summary.final_distance {
        assert!(d < 0.05, "final distance {d}");
    }
    // no disturbance anywhere
    assert_eq!(summary.disturbance_occupancy, Some(0.0));
}

#[test]
fn example2_hands_task_over_after_losing_specialization() {
    let s = load_scenario(bundled::EXAMPLE2).unwrap();
    let trace = run_scenario(&s).unwrap();
    let switch = trace.iter().position(|r| r.reassigned).expect("a reassignment");
    let s11 = trace[switch].robots[0].spec[0];
    assert!(s11 < s.spec_init[0][0], "s11 at the switch: {s11}");
    assert_ne!(trace[switch].robots[0].task, 0);
    let summary = summarize(&trace, s.diag_epsilon).unwrap();
    assert!(summary.all_completed(), "{:?}", summary.completion);
    assert!(summary.disturbance_occupancy.unwrap() > 0.0);
}

#[test]
fn until_truncates_the_run() {
    let s = load_scenario(bundled::EXAMPLE1).unwrap();
    let short = run_scenario_until(&s, 1.0).unwrap();
    let full = run_scenario(&s).unwrap();
    assert_eq!(short.len(), num_steps(1.0, s.dt) + 1);
    assert_eq!(short[..], full[..short.len()]);
    assert_eq!(run_scenario_until(&s, 1e9).unwrap(), full);
}

#[test]
fn zero_robots_give_an_empty_trace() {
    let s = load_scenario("[[tasks]]\ngoal = [0.5, 0.0]\n").unwrap();
    assert!(run_scenario(&s).unwrap().is_empty());
    let s = load_scenario("[[robots]]\nposition = [0.5, 0.0]\n").unwrap();
    assert!(run_scenario(&s).unwrap().is_empty());
}

#[test]
fn empty_trace_cannot_be_summarized() {
    assert_eq!(summarize(&[], 0.01), Err(SummaryError::EmptyTrace));
}

#[test]
fn zero_horizon_gives_one_record() {
    let s = load_scenario("t_final = 0.0\n[[robots]]\nposition = [0.0, 0.0]\n[[tasks]]\ngoal = [1.0, 0.0]\n").unwrap();
    let trace = run_scenario(&s).unwrap();
    assert_eq!(trace.len(), 1);
    let summary = summarize(&trace, s.diag_epsilon).unwrap();
    assert_eq!(summary.disturbance_occupancy, None);
    assert_eq!(summary.completion, vec![None]);
}

#[test]
fn unreachable_goal_never_completes() {
    let text = r#"
t_final = 5.0
[[robots]]
position = [-1.0, 0.0]
[[tasks]]
goal = [1.0, 0.0]
[[regions]]
name = "wall"
geometry = { shape = "rect", min = [-0.1, -1.0], max = [0.1, 1.0] }
affected = ["ground", "aerial"]
mobility = 0.0
"#;
    let s = load_scenario(text).unwrap();
    let trace = run_scenario(&s).unwrap();
    let summary = summarize(&trace, s.diag_epsilon).unwrap();
    assert_eq!(summary.completion, vec![None]);
    assert!(trace.iter().all(|r| r.robots[0].x_act.x < -0.1));
}
