use std::fs;
use std::path::{Path, PathBuf};

use wholebody::bench::report::{
    aggregate_csv, metrics_csv, parse_metrics_csv, strip_latency, summary_text, trajectory_csv, trajectory_header,
    AGGREGATE_FILE, METRICS_FILE, SUMMARY_FILE, TRAJECTORY_DIR,
};
use wholebody::bench::{emit_report, generate_scenario, run_suite, Cell, Family, RunMetrics, SuiteTable, Variant};
use wholebody::planner::PlannerConfig;
use wholebody::Error;

fn golden(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name)
}

/// Compares against the committed file; `UPDATE_GOLDEN=1` rewrites it.
fn check_golden(name: &str, actual: &str) {
    let path = golden(name);
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        fs::write(&path, actual).unwrap();
        return;
    }
    let expected = fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    assert_eq!(actual, expected, "{} differs", path.display());
}

fn row(scenario: &str, family: &str, variant: &str, partial: Vec<bool>, latency: f64, total: f64) -> RunMetrics {
    RunMetrics {
        scenario: scenario.into(),
        family: family.into(),
        variant: variant.into(),
        success: partial.iter().all(|&p| p),
        partial_successes: partial,
        steps: 12,
        latency_ms: latency,
        reach: 0.37,
        smooth: 1.0 / 3.0,
        collide: 0.0,
        total,
        objective_evals: 900,
        error: String::new(),
    }
}

fn synthetic() -> SuiteTable {
    let mut failed = row("pp-1", "pick_place", "direct", vec![false, false, false], 0.0, 0.0);
    failed.error = "invalid argument: \"quoted\", with comma".into();
    let rows = vec![
        row("oor-0", "out_of_reach", "bilevel", vec![true], 412.5, 13.25),
        row("oor-0", "out_of_reach", "direct", vec![false], 8123.0, 80130.5),
        row("pp-1", "pick_place", "bilevel", vec![true, true, false], 250.125, 27.5),
        failed,
    ];
    SuiteTable { cells: rows.into_iter().map(|metrics| Cell { metrics, segments: vec![] }).collect() }
}

#[test]
fn metrics_header_matches_golden() {
    let csv = metrics_csv(&[]).unwrap();
    check_golden("metrics_header.csv", &csv);
}

#[test]
fn aggregate_header_matches_golden() {
    check_golden("aggregate_header.csv", &aggregate_csv(&[]));
}

#[test]
fn trajectory_header_matches_golden() {
    check_golden("trajectory_header.csv", &(trajectory_header(6).join(",") + "\n"));
}

#[test]
fn synthetic_outputs_match_golden() {
    let table = synthetic();
    let rows: Vec<&RunMetrics> = table.rows().collect();
    check_golden("metrics.csv", &metrics_csv(&rows).unwrap());
    check_golden("aggregate.csv", &aggregate_csv(&table.aggregate()));
    check_golden("summary.txt", &summary_text(&table));
}

#[test]
fn csv_round_trip_recovers_metrics_exactly() {
    let table = synthetic();
    let rows: Vec<&RunMetrics> = table.rows().collect();
    let text = metrics_csv(&rows).unwrap();
    let back = parse_metrics_csv(&text, Path::new("m.csv")).unwrap();
    let expected: Vec<RunMetrics> = rows.into_iter().cloned().collect();
    assert_eq!(back, expected);
}

#[test]
fn parse_rejects_wrong_header() {
    let err = parse_metrics_csv("a,b\n1,2\n", Path::new("m.csv")).unwrap_err();
    assert!(matches!(err, Error::Parse { .. }));
}

#[test]
fn latency_is_the_only_column_stripped() {
    let table = synthetic();
    let mut other = synthetic();
    for c in &mut other.cells {
        c.metrics.latency_ms += 1.5;
    }
    let a = metrics_csv(&table.rows().collect::<Vec<_>>()).unwrap();
    let b = metrics_csv(&other.rows().collect::<Vec<_>>()).unwrap();
    assert_ne!(a, b);
    assert_eq!(strip_latency(&a), strip_latency(&b));
    assert!(!strip_latency(&a).contains("latency_ms"));
    assert_eq!(strip_latency(&a).lines().count(), a.lines().count());
}

#[test]
fn single_cell_gives_one_data_row_and_all_files() {
    let sc = generate_scenario(Family::FreeSpace, 0, 7).unwrap();
    let table = run_suite(&[sc], &[Variant::bilevel()], &PlannerConfig::default()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let written = emit_report(&table, dir.path()).unwrap();
    assert_eq!(written.len(), 4);
    let metrics = fs::read_to_string(dir.path().join(METRICS_FILE)).unwrap();
    assert_eq!(metrics.lines().count(), 2);
    assert!(dir.path().join(AGGREGATE_FILE).is_file());
    assert!(dir.path().join(SUMMARY_FILE).is_file());
    let traj = fs::read_to_string(dir.path().join(TRAJECTORY_DIR).join("free_space-000__bilevel.csv")).unwrap();
    let expected = trajectory_csv(&table.cells[0].segments).unwrap();
    assert_eq!(traj, expected);
    let header = fs::read_to_string(golden("trajectory_header.csv")).unwrap();
    assert!(traj.starts_with(&header));
    assert_eq!(traj.lines().count(), 1 + table.cells[0].metrics.steps);
}

#[test]
fn io_errors_carry_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    fs::write(&blocker, "x").unwrap();
    let err = emit_report(&synthetic(), &blocker).unwrap_err();
    assert!(matches!(err, Error::Io { .. }));
    assert!(err.to_string().contains(blocker.to_str().unwrap()), "{err}");
}

#[test]
fn empty_table_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    assert!(emit_report(&SuiteTable { cells: vec![] }, dir.path()).is_err());
}
