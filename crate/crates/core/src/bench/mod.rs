//! Scenario files, the scenario generator, suite runs and report output.

pub mod generate;
pub mod report;
pub mod scenario;
pub mod suite;

pub use generate::{generate_scenario, generate_scenarios, scenario_seed};
pub use report::{emit_report, metrics_csv, parse_metrics_csv, strip_latency, trajectory_csv};
pub use scenario::{
    check_certificate, default_base_geometry, load_prepared, load_scenario, CertificateCheck, Family, Prepared,
    Scenario, SegmentCheck, SCHEMA_VERSION,
};
pub use suite::{run_suite, AggregateRow, Cell, RunMetrics, SuiteTable, Variant};
