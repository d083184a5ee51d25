use wholebody::bench::report::{metrics_csv, strip_latency};
use wholebody::bench::{generate_scenario, generate_scenarios, run_suite, Family, Scenario, SuiteTable, Variant};
use wholebody::costs::CostWeights;
use wholebody::planner::{lift_waypoint, step_count, PlannerConfig, SearchMode};

fn quick() -> PlannerConfig {
    PlannerConfig { max_evals: 60, max_outer_rounds: 2, ..PlannerConfig::default() }
}

fn csv(table: &SuiteTable) -> String {
    metrics_csv(&table.rows().collect::<Vec<_>>()).unwrap()
}

#[test]
fn free_space_default_run_succeeds_with_expected_steps() {
    let sc = generate_scenario(Family::FreeSpace, 0, 7).unwrap();
    let cfg = PlannerConfig::default();
    let expected: usize = sc
        .waypoints
        .iter()
        .map(|wp| {
            let (a, b) = lift_waypoint(wp).unwrap();
            step_count(&a, &b, cfg.step_size) + 1
        })
        .sum();
    let table = run_suite(&[sc], &[Variant::bilevel()], &cfg).unwrap();
    assert_eq!(table.cells.len(), 1);
    let m = &table.cells[0].metrics;
    assert!(m.success, "{m:?}");
    assert_eq!(m.steps, expected);
}

#[test]
fn cells_follow_scenario_then_variant_order() {
    let mut scenarios = generate_scenarios(Family::FreeSpace, 2, 3).unwrap();
    scenarios.push(generate_scenario(Family::OutOfReach, 0, 3).unwrap());
    let variants = [Variant::bilevel(), Variant::without(1)];
    let table = run_suite(&scenarios, &variants, &quick()).unwrap();
    let order: Vec<(String, String)> =
        table.rows().map(|m| (m.scenario.clone(), m.variant.clone())).collect();
    let expected: Vec<(String, String)> = scenarios
        .iter()
        .flat_map(|s| variants.iter().map(move |v| (s.name.clone(), v.name.clone())))
        .collect();
    assert_eq!(order, expected);
}

#[test]
fn suite_is_deterministic_apart_from_latency() {
    let scenarios = vec![
        generate_scenario(Family::OutOfReach, 0, 9).unwrap(),
        generate_scenario(Family::Corridor, 0, 9).unwrap(),
    ];
    let variants = [Variant::bilevel(), Variant::direct()];
    let a = run_suite(&scenarios, &variants, &quick()).unwrap();
    let b = run_suite(&scenarios, &variants, &quick()).unwrap();
    assert_eq!(strip_latency(&csv(&a)), strip_latency(&csv(&b)));
    for (x, y) in a.cells.iter().zip(&b.cells) {
        for (s, t) in x.segments.iter().zip(&y.segments) {
            assert_eq!(s.trajectory, t.trajectory);
            assert_eq!(s.report, t.report);
        }
    }
    let other_seed = PlannerConfig { seed: 1, ..quick() };
    let c = run_suite(&scenarios, &variants, &other_seed).unwrap();
    assert_ne!(strip_latency(&csv(&a)), strip_latency(&csv(&c)));
}

#[test]
fn failing_cell_is_recorded_and_suite_continues() {
    let good = generate_scenario(Family::FreeSpace, 0, 7).unwrap();
    let bad = Scenario { name: "too-fine".into(), field_resolution: 1e-4, ..good.clone() };
    let table = run_suite(&[bad, good], &[Variant::bilevel()], &quick()).unwrap();
    let rows: Vec<_> = table.rows().collect();
    assert!(!rows[0].error.is_empty());
    assert!(!rows[0].success);
    assert_eq!(rows[0].partial_successes, vec![false]);
    assert!(rows[1].error.is_empty());
    assert!(rows[1].success);
}

#[test]
fn success_requires_every_segment() {
    let scenarios = generate_scenarios(Family::PickPlace, 2, 7).unwrap();
    let cfg = PlannerConfig { max_outer_rounds: 1, ..quick() };
    let table = run_suite(&scenarios, &[Variant::bilevel()], &cfg).unwrap();
    for m in table.rows() {
        assert_eq!(m.partial_successes.len(), 3);
        assert_eq!(m.success, m.partial_successes.iter().all(|&s| s));
    }
}

#[test]
fn empty_inputs_are_rejected() {
    let sc = generate_scenario(Family::FreeSpace, 0, 7).unwrap();
    assert!(run_suite(&[], &[Variant::bilevel()], &quick()).is_err());
    assert!(run_suite(&[sc], &[], &quick()).is_err());
}

#[test]
fn ablation_variants_zero_one_weight_each() {
    let w = CostWeights::default();
    let set = Variant::ablation_set();
    let names: Vec<&str> = set.iter().map(|v| v.name.as_str()).collect();
    assert_eq!(names, ["bilevel", "direct", "no_reach", "no_smooth", "no_collide"]);
    assert_eq!(set[1].search_mode, SearchMode::Direct);
    let scaled: Vec<[f64; 3]> = set[2..]
        .iter()
        .map(|v| {
            let s = v.weights(&w);
            [s.lambda_r, s.lambda_s, s.lambda_c]
        })
        .collect();
    assert_eq!(scaled, vec![[0.0, 1.0, 0.6], [10.0, 0.0, 0.6], [10.0, 1.0, 0.0]]);
    assert_eq!(Variant::by_name("no_smooth"), Some(Variant::without(1)));
    assert_eq!(Variant::by_name("nope"), None);
}
