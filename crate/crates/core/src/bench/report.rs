use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::suite::{AggregateRow, RunMetrics, SuiteTable};
use crate::error::{Error, Result};
use crate::kinematics::IkStatus;
use crate::planner::PlanResult;

pub const METRICS_COLUMNS: [&str; 13] = [
    "scenario",
    "family",
    "variant",
    "success",
    "partial_successes",
    "steps",
    "latency_ms",
    "reach",
    "smooth",
    "collide",
    "total",
    "objective_evals",
    "error",
];

pub const AGGREGATE_COLUMNS: [&str; 8] = [
    "family",
    "variant",
    "runs",
    "success_rate",
    "partial_success_rate",
    "mean_latency_ms",
    "mean_steps",
    "mean_total",
];

/// Leading columns of a trajectory dump; one `q<i>` column per joint follows
/// `base_yaw`.
pub const TRAJECTORY_LEADING: [&str; 5] = ["segment", "converged", "t", "base_x", "base_y"];
pub const TRAJECTORY_TRAILING: [&str; 6] = ["gripper", "reach", "smooth", "collide", "ik_status", "ik_iterations"];

pub const METRICS_FILE: &str = "metrics.csv";
pub const AGGREGATE_FILE: &str = "aggregate.csv";
pub const SUMMARY_FILE: &str = "summary.txt";
pub const TRAJECTORY_DIR: &str = "trajectories";

fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Parse { path: path.to_path_buf(), message: format!("{other:?}") },
    }
}

fn bools(v: &[bool]) -> String {
    v.iter().map(|&b| if b { "1" } else { "0" }).collect::<Vec<_>>().join(";")
}

/// One metrics row as strings. Floats use the shortest representation that
/// parses back to the same value.
pub fn metrics_record(m: &RunMetrics) -> Vec<String> {
    vec![
        m.scenario.clone(),
        m.family.clone(),
        m.variant.clone(),
        m.success.to_string(),
        bools(&m.partial_successes),
        m.steps.to_string(),
        m.latency_ms.to_string(),
        m.reach.to_string(),
        m.smooth.to_string(),
        m.collide.to_string(),
        m.total.to_string(),
        m.objective_evals.to_string(),
        m.error.clone(),
    ]
}

pub fn metrics_csv(rows: &[&RunMetrics]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let here = Path::new("<memory>");
    w.write_record(METRICS_COLUMNS).map_err(|e| csv_err(here, e))?;
    for m in rows {
        w.write_record(metrics_record(m)).map_err(|e| csv_err(here, e))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::io(here, e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn parse_metrics_csv(text: &str, origin: &Path) -> Result<Vec<RunMetrics>> {
    let bad = |m: String| Error::Parse { path: origin.to_path_buf(), message: m };
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let header = r.headers().map_err(|e| csv_err(origin, e))?;
    if header.iter().ne(METRICS_COLUMNS) {
        return Err(bad(format!("unexpected header {header:?}")));
    }
    let mut out = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| csv_err(origin, e))?;
        let field = |i: usize| rec.get(i).unwrap_or_default();
        let num = |i: usize| -> Result<f64> {
            field(i).parse().map_err(|_| bad(format!("row {}: bad {} {:?}", line + 1, METRICS_COLUMNS[i], field(i))))
        };
        let int = |i: usize| -> Result<usize> {
            field(i).parse().map_err(|_| bad(format!("row {}: bad {} {:?}", line + 1, METRICS_COLUMNS[i], field(i))))
        };
        let partial = if field(4).is_empty() {
            Vec::new()
        } else {
            field(4)
                .split(';')
                .map(|s| match s {
                    "1" => Ok(true),
                    "0" => Ok(false),
                    _ => Err(bad(format!("row {}: bad partial_successes {:?}", line + 1, field(4)))),
                })
                .collect::<Result<_>>()?
        };
        out.push(RunMetrics {
            scenario: field(0).to_string(),
            family: field(1).to_string(),
            variant: field(2).to_string(),
            success: field(3).parse().map_err(|_| bad(format!("row {}: bad success", line + 1)))?,
            partial_successes: partial,
            steps: int(5)?,
            latency_ms: num(6)?,
            reach: num(7)?,
            smooth: num(8)?,
            collide: num(9)?,
            total: num(10)?,
            objective_evals: int(11)?,
            error: field(12).to_string(),
        });
    }
    Ok(out)
}

pub fn aggregate_csv(rows: &[AggregateRow]) -> String {
    let mut s = AGGREGATE_COLUMNS.join(",");
    s.push('\n');
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{}",
            r.family,
            r.variant,
            r.runs,
            r.success_rate,
            r.partial_success_rate,
            r.mean_latency_ms,
            r.mean_steps,
            r.mean_total
        );
    }
    s
}

/// Plain-text table of the aggregate rows.
pub fn summary_text(table: &SuiteTable) -> String {
    let rows = table.aggregate();
    let cells = table.cells.len();
    let errors = table.rows().filter(|m| !m.error.is_empty()).count();
    let mut s = String::new();
    let _ = writeln!(s, "cells: {cells}  errors: {errors}");
    let _ = writeln!(s);
    let _ = writeln!(
        s,
        "{:<14} {:<12} {:>5} {:>8} {:>10} {:>12} {:>10} {:>14}",
        "family", "variant", "runs", "SR", "partial SR", "latency ms", "steps", "objective"
    );
    for r in &rows {
        let _ = writeln!(
            s,
            "{:<14} {:<12} {:>5} {:>7.1}% {:>9.1}% {:>12.1} {:>10.1} {:>14.4}",
            r.family,
            r.variant,
            r.runs,
            100.0 * r.success_rate,
            100.0 * r.partial_success_rate,
            r.mean_latency_ms,
            r.mean_steps,
            r.mean_total
        );
    }
    let failed: Vec<&RunMetrics> = table.rows().filter(|m| !m.error.is_empty()).collect();
    if !failed.is_empty() {
        let _ = writeln!(s);
        for m in failed {
            let _ = writeln!(s, "error {} / {}: {}", m.scenario, m.variant, m.error);
        }
    }
    s
}

pub fn trajectory_header(dof: usize) -> Vec<String> {
    let mut h: Vec<String> = TRAJECTORY_LEADING.iter().map(|s| s.to_string()).collect();
    h.push("base_yaw".into());
    h.extend((0..dof).map(|i| format!("q{i}")));
    h.extend(TRAJECTORY_TRAILING.iter().map(|s| s.to_string()));
    h
}

/// One row per sample of every attempted segment.
pub fn trajectory_csv(segments: &[PlanResult]) -> Result<String> {
    let dof = segments
        .iter()
        .find(|r| r.attempted)
        .map_or(0, |r| r.trajectory.first().joints.len());
    let here = Path::new("<memory>");
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(trajectory_header(dof)).map_err(|e| csv_err(here, e))?;
    for (k, r) in segments.iter().enumerate().filter(|(_, r)| r.attempted) {
        for (t, s) in r.trajectory.states().iter().enumerate() {
            let mut rec = vec![
                k.to_string(),
                r.converged.to_string(),
                t.to_string(),
                s.base.x.to_string(),
                s.base.y.to_string(),
                s.base.yaw().to_string(),
            ];
            rec.extend(s.joints.as_slice().iter().map(|q| q.to_string()));
            let c = r.report.per_state.get(t);
            let ik = r.report.ik_results.get(t);
            rec.push(s.gripper.to_string());
            rec.push(c.map_or(String::new(), |c| c.reach.to_string()));
            rec.push(c.map_or(String::new(), |c| c.smooth.to_string()));
            rec.push(c.map_or(String::new(), |c| c.collide.to_string()));
            rec.push(match ik.map(|i| i.status) {
                Some(IkStatus::Converged) => "converged".into(),
                Some(IkStatus::IterationBudgetExceeded) => "budget_exceeded".into(),
                None => String::new(),
            });
            rec.push(ik.map_or(String::new(), |i| i.iterations.to_string()));
            w.write_record(rec).map_err(|e| csv_err(here, e))?;
        }
    }
    let bytes = w.into_inner().map_err(|e| Error::io(here, e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

fn write(path: PathBuf, contents: &str) -> Result<PathBuf> {
    fs::write(&path, contents).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

pub fn trajectory_file_name(scenario: &str, variant: &str) -> String {
    let clean = |s: &str| {
        s.chars()
            .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
            .collect::<String>()
    };
    format!("{}__{}.csv", clean(scenario), clean(variant))
}

/// Writes metrics.csv, aggregate.csv, summary.txt and one trajectory dump per
/// cell under `out_dir`. Returns the paths written.
pub fn emit_report(table: &SuiteTable, out_dir: &Path) -> Result<Vec<PathBuf>> {
    if table.cells.is_empty() {
        return Err(Error::invalid("empty metrics table"));
    }
    let traj_dir = out_dir.join(TRAJECTORY_DIR);
    fs::create_dir_all(&traj_dir).map_err(|e| Error::io(&traj_dir, e))?;
    let rows: Vec<&RunMetrics> = table.rows().collect();
    let mut written = vec![
        write(out_dir.join(METRICS_FILE), &metrics_csv(&rows)?)?,
        write(out_dir.join(AGGREGATE_FILE), &aggregate_csv(&table.aggregate()))?,
        write(out_dir.join(SUMMARY_FILE), &summary_text(table))?,
    ];
    for cell in &table.cells {
        if cell.segments.is_empty() {
            continue;
        }
        let name = trajectory_file_name(&cell.metrics.scenario, &cell.metrics.variant);
        written.push(write(traj_dir.join(name), &trajectory_csv(&cell.segments)?)?);
    }
    Ok(written)
}

/// The metrics CSV with the latency column dropped, for byte comparisons
/// across runs.
pub fn strip_latency(csv_text: &str) -> String {
    let idx = METRICS_COLUMNS.iter().position(|c| *c == "latency_ms").unwrap();
    let mut r = csv::ReaderBuilder::new().has_headers(false).from_reader(csv_text.as_bytes());
    let mut w = csv::Writer::from_writer(Vec::new());
    for rec in r.records().flatten() {
        let kept: Vec<&str> = rec.iter().enumerate().filter(|(i, _)| *i != idx).map(|(_, f)| f).collect();
        let _ = w.write_record(kept);
    }
    String::from_utf8(w.into_inner().unwrap_or_default()).unwrap_or_default()
}
