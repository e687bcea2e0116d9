use std::io::Cursor;

use adaptalloc::geometry::Vec2;
use adaptalloc::scenario::{bundled, load_scenario, read_trace, write_trace, LoadError, TraceError};
use adaptalloc::world::{run_scenario, summarize, RobotRecord, TraceRecord};

const ROBOTS_AND_TASKS: &str = r#"
[[robots]]
position = [0.0, 0.0]

[[robots]]
position = [0.5, 0.0]

[[tasks]]
goal = [1.0, 0.5]

[[tasks]]
goal = [-1.0, 0.5]
"#;

/// Two robots and two tasks, with `top` before the first table and `tail`
/// after the last.
fn doc(top: &str, tail: &str) -> String {
    format!("{top}\n{ROBOTS_AND_TASKS}\n{tail}\n")
}

fn expect_invalid(text: &str, field: &str) {
    match load_scenario(text) {
        Err(LoadError::Validation(e)) => assert!(e.mentions(field), "expected an issue on {field}, got: {e}"),
        Err(other) => panic!("expected a validation error on {field}, got {other}"),
        Ok(_) => panic!("expected a validation error on {field}, document loaded:\n{text}"),
    }
}

#[test]
fn base_document_is_valid() {
    load_scenario(&doc("", "")).unwrap();
}

macro_rules! invalid {
    ($($name:ident: ($top:expr, $tail:expr) => $field:expr;)*) => {
        $(
            #[test]
            fn $name() {
                expect_invalid(&doc($top, $tail), $field);
            }
        )*
    };
}

invalid! {
    rejects_zero_dt: ("dt = 0.0", "") => "dt";
    rejects_negative_t_final: ("t_final = -1.0", "") => "t_final";
    rejects_negative_diag_epsilon: ("diag_epsilon = -0.1", "") => "diag_epsilon";
    rejects_inverted_bounds: ("", "[bounds]\nmin = [1.0, 1.0]\nmax = [0.0, 0.0]") => "bounds";
    rejects_duplicate_robot_id: ("", "[[robots]]\nid = 1\nposition = [0.2, 0.2]") => "robots[2].id";
    rejects_robot_outside_bounds: ("", "[[robots]]\nposition = [5.0, 0.0]") => "robots[2].position";
    rejects_duplicate_task_id: ("", "[[tasks]]\nid = 2\ngoal = [0.0, 0.0]") => "tasks[2].id";
    rejects_goal_outside_bounds: ("", "[[tasks]]\ngoal = [0.0, 3.0]") => "tasks[2].goal";
    rejects_zero_s_max: ("", "[specialization]\ns_max = 0.0") => "specialization.s_max";
    rejects_eps_s_above_s_max: ("", "[specialization]\neps_s = 1.5") => "specialization.eps_s";
    rejects_initial_out_of_range: ("", "[specialization]\ninitial = [[1.0, 2.0], [1.0, 1.0]]") => "specialization.initial[0][1]";
    rejects_initial_wrong_shape: ("", "[specialization]\ninitial = [[1.0]]") => "specialization.initial";
    rejects_nominal_out_of_range: ("", "[specialization]\nnominal = [[1.0, 1.0], [1.0, -0.5]]") => "specialization.nominal[1][1]";
    rejects_short_pi_star: ("", "[allocation]\npi_star = [1.0]") => "allocation.pi_star";
    rejects_pi_star_out_of_range: ("", "[allocation]\npi_star = [1.5, -0.5]") => "allocation.pi_star";
    rejects_pi_star_sum_above_one: ("", "[allocation]\npi_star = [0.8, 0.8]") => "allocation.pi_star";
    rejects_short_task_weights: ("", "[allocation]\ntask_weights = [1.0]") => "allocation.task_weights";
    rejects_negative_task_weight: ("", "[allocation]\ntask_weights = [1.0, -1.0]") => "allocation.task_weights";
    rejects_negative_mismatch_weight: ("", "[allocation]\nmismatch_weight = -1.0") => "allocation.mismatch_weight";
    rejects_zero_slack_weight: ("", "[allocation]\nslack_weight = 0.0") => "allocation.slack_weight";
    rejects_kappa_of_one: ("", "[allocation]\nkappa = 1.0") => "allocation.kappa";
    rejects_zero_delta_max: ("", "[allocation]\ndelta_max = 0.0") => "allocation.delta_max";
    rejects_negative_u_max: ("", "[allocation]\nu_max = -0.2") => "allocation.u_max";
    rejects_zero_gamma_gain: ("", "[gamma]\ngain = 0.0") => "gamma.gain";
    rejects_zero_beta1: ("", "[adaptation]\nbeta1 = 0.0") => "adaptation.beta1";
    rejects_negative_beta2: ("", "[adaptation]\nbeta2 = -1.0") => "adaptation.beta2";
    rejects_integral_mode_without_beta2: ("", "[adaptation]\nmode = \"with_integral\"") => "adaptation.beta2";
    rejects_full_leak: ("", "[adaptation]\nleak = 1.0") => "adaptation.leak";
    rejects_zero_tol_primal: ("", "[qp]\ntol_primal = 0.0") => "qp.tol_primal";
    rejects_zero_tol_dual: ("", "[qp]\ntol_dual = 0.0") => "qp.tol_dual";
    rejects_zero_tol_obj: ("", "[qp]\ntol_obj = 0.0") => "qp.tol_obj";
    rejects_zero_max_iter: ("", "[qp]\nmax_iter = 0") => "qp.max_iter";
    rejects_unsupported_schema_version: ("schema_version = 2", "") => "schema_version";
}

const DISK: &str = "geometry = { shape = \"disk\", center = [0.0, 0.0], radius = 0.3 }\naffected = [\"ground\"]";

#[test]
fn rejects_duplicate_region_name() {
    let tail = format!("[[regions]]\nname = \"a\"\n{DISK}\nmobility = 0.0\n[[regions]]\nname = \"a\"\n{DISK}\nmobility = 0.5");
    expect_invalid(&doc("", &tail), "regions[1].name");
}

#[test]
fn rejects_malformed_geometry() {
    let tail = "[[regions]]\nname = \"a\"\ngeometry = { shape = \"annulus\", center = [0.0, 0.0], r_in = 0.5, r_out = 0.2 }\naffected = [\"ground\"]\nmobility = 0.0";
    expect_invalid(&doc("", tail), "regions[0].geometry");
    let tail = "[[regions]]\nname = \"a\"\ngeometry = { shape = \"annular_sector\", center = [0.0, 0.0], r_in = 0.1, r_out = 0.2, angle_from = 1.0, angle_to = 0.0 }\naffected = [\"ground\"]\nmobility = 0.0";
    expect_invalid(&doc("", tail), "regions[0].geometry");
    let tail = format!("[[regions]]\nname = \"a\"\n{}\nmobility = 0.0", DISK.replace("0.3", "-0.3"));
    expect_invalid(&doc("", &tail), "regions[0].geometry");
}

#[test]
fn rejects_region_mobility_above_one() {
    let tail = format!("[[regions]]\nname = \"a\"\n{DISK}\nmobility = 1.5");
    expect_invalid(&doc("", &tail), "regions[0].mobility");
}

fn with_event(event: &str) -> String {
    doc("t_final = 10.0", &format!("[[regions]]\nname = \"a\"\n{DISK}\nmobility = 0.0\n[[schedule]]\n{event}"))
}

#[test]
fn rejects_event_after_t_final() {
    expect_invalid(&with_event("time = 11.0\nregion = \"a\"\nactive = false"), "schedule[0].time");
}

#[test]
fn rejects_event_on_unknown_region() {
    expect_invalid(&with_event("time = 1.0\nregion = \"b\"\nactive = false"), "schedule[0].region");
}

#[test]
fn rejects_event_that_changes_nothing() {
    expect_invalid(&with_event("time = 1.0\nregion = \"a\""), "schedule[0]");
}

#[test]
fn rejects_event_mobility_out_of_range() {
    expect_invalid(&with_event("time = 1.0\nregion = \"a\"\nmobility = -0.1"), "schedule[0].mobility");
}

#[test]
fn rejects_search_space_beyond_guard() {
    let mut tail = String::new();
    for i in 0..23 {
        tail += &format!("[[robots]]\nposition = [{}, 0.8]\n", -1.2 + 0.1 * i as f64);
    }
    expect_invalid(&doc("", &tail), "robots");
    // 24 robots on two tasks sit exactly on the limit
    let mut tail = String::new();
    for i in 0..22 {
        tail += &format!("[[robots]]\nposition = [{}, 0.8]\n", -1.2 + 0.1 * i as f64);
    }
    load_scenario(&doc("", &tail)).unwrap();
}

#[test]
fn all_issues_are_reported_together() {
    let err = match load_scenario(&doc("dt = -1.0", "[allocation]\nkappa = 0.5")) {
        Err(LoadError::Validation(e)) => e,
        other => panic!("{other:?}"),
    };
    assert!(err.mentions("dt") && err.mentions("allocation.kappa"));
}

#[test]
fn parse_error_reports_line() {
    let text = "dt = 0.033\nt_final = 30.0\nname = [unterminated\n";
    match load_scenario(text) {
        Err(LoadError::Parse(e)) => assert_eq!(e.line, Some(3), "{e}"),
        other => panic!("expected a parse error, got {other:?}"),
    }
}

#[test]
fn unknown_keys_are_parse_errors() {
    assert!(matches!(load_scenario(&doc("speed = 3.0", "")), Err(LoadError::Parse(_))));
    assert!(matches!(
        load_scenario(&doc("", "[allocation]\nkapa = 10.0")),
        Err(LoadError::Parse(_))
    ));
}

#[test]
fn minimal_document_fills_defaults() {
    let s = load_scenario("[[robots]]\nposition = [0.0, 0.0]\n[[tasks]]\ngoal = [1.0, 0.0]\n").unwrap();
    assert_eq!((s.robots.len(), s.tasks.len()), (1, 1));
    assert_eq!(s.global.pi_star, vec![1.0]);
    assert_eq!(s.spec_init, vec![vec![1.0]]);
    assert_eq!(s.s_bar, s.spec_init);
    assert_eq!((s.robots[0].id, s.tasks[0].id), (1, 1));
    assert_eq!(s.dt, 0.033);
    assert_eq!(s.t_final, 30.0);
}

#[test]
fn example1_matrices() {
    let s = load_scenario(bundled::EXAMPLE1).unwrap();
    assert_eq!(s.spec_init, vec![vec![1.0, 0.0], vec![1.0, 1.0]]);
    assert_eq!(s.global.pi_star, vec![0.5, 0.5]);
}

#[test]
fn every_bundled_scenario_loads() {
    for (name, text) in bundled::ALL {
        let s = load_scenario(text).unwrap_or_else(|e| panic!("{name}: {e}"));
        assert_eq!(s.name, name);
    }
}

fn roundtrip(records: &[TraceRecord]) -> Vec<TraceRecord> {
    let mut buf = Vec::new();
    write_trace(&mut buf, None, records).unwrap();
    let trace = read_trace(Cursor::new(buf)).unwrap();
    assert_eq!(trace.header.scenario, None);
    trace.records
}

#[test]
fn empty_trace_roundtrip() {
    assert!(roundtrip(&[]).is_empty());
}

#[test]
fn single_record_roundtrip_is_bitwise() {
    let awkward = [0.1 + 0.2, 1e-300, -0.0, 5e-324, f64::MAX, -1.0 / 3.0];
    let record = TraceRecord {
        k: 7,
        t: 7.0 * 0.033,
        robots: vec![RobotRecord {
            x_act: Vec2::new(awkward[0], awkward[1]),
            x_sim: Vec2::new(awkward[2], awkward[3]),
            u: Vec2::new(awkward[5], 0.2),
            task: 1,
            slack: awkward.to_vec(),
            spec: vec![0.905, 0.802],
            cost: vec![2.5e-3, 1.0],
            deviation: vec![-0.19, 0.0],
        }],
        pi_h: vec![0.5, 0.5],
        objective_total: 1e15 * 0.0625,
        reassigned: true,
        qp_iterations: 12,
    };
    let back = roundtrip(std::slice::from_ref(&record));
    assert_eq!(back.len(), 1);
    let r = &back[0].robots[0];
    let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&r.slack), bits(&awkward));
    assert_eq!(r.x_act.x.to_bits(), awkward[0].to_bits());
    assert_eq!(r.x_sim.x.to_bits(), (-0.0f64).to_bits());
    assert_eq!(back[0], record);
}

#[test]
fn example1_trace_resummarizes_identically() {
    let scenario = load_scenario(bundled::EXAMPLE1).unwrap();
    let records = run_scenario(&scenario).unwrap();
    let mut buf = Vec::new();
    write_trace(&mut buf, Some(&scenario), &records).unwrap();
    let trace = read_trace(Cursor::new(buf)).unwrap();
    assert_eq!(trace.header.scenario.as_ref(), Some(&scenario));
    assert_eq!(trace.records, records);
    assert_eq!(
        summarize(&trace.records, scenario.diag_epsilon).unwrap(),
        summarize(&records, scenario.diag_epsilon).unwrap()
    );
}

#[test]
fn rejects_other_schema_versions() {
    let text = "{\"schema_version\": 2, \"scenario\": null}\n";
    assert!(matches!(read_trace(Cursor::new(text)), Err(TraceError::SchemaVersion(2))));
}

#[test]
fn rejects_missing_header() {
    assert!(matches!(read_trace(Cursor::new("")), Err(TraceError::MissingHeader)));
    assert!(matches!(read_trace(Cursor::new("\n\n")), Err(TraceError::MissingHeader)));
}

#[test]
fn malformed_record_reports_its_line() {
    let text = "{\"schema_version\": 1, \"scenario\": null}\n{\"k\": 0}\n";
    match read_trace(Cursor::new(text)) {
        Err(TraceError::Json { line, .. }) => assert_eq!(line, 2),
        other => panic!("expected a JSON error, got {other:?}"),
    }
}
