use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::scenario::{Prepared, Scenario};
use crate::costs::CostWeights;
use crate::error::Result;
use crate::planner::{derive_seed, plan_episode, PlanResult, PlannerConfig, SearchMode};

/// One planner configuration of a suite. `lambda_scale` multiplies the
/// scenario's term weights, so a zero entry removes that term.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Variant {
    pub name: String,
    pub search_mode: SearchMode,
    pub lambda_scale: [f64; 3],
}

impl Variant {
    pub fn bilevel() -> Self {
        Variant { name: "bilevel".into(), search_mode: SearchMode::BiLevel, lambda_scale: [1.0; 3] }
    }

    pub fn direct() -> Self {
        Variant { name: "direct".into(), search_mode: SearchMode::Direct, ..Variant::bilevel() }
    }

    pub fn without(term: usize) -> Self {
        let name = ["no_reach", "no_smooth", "no_collide"][term];
        let mut lambda_scale = [1.0; 3];
        lambda_scale[term] = 0.0;
        Variant { name: name.into(), lambda_scale, ..Variant::bilevel() }
    }

    /// The preconfigured ablation set: both search modes and each single-term
    /// removal.
    pub fn ablation_set() -> Vec<Variant> {
        vec![Variant::bilevel(), Variant::direct(), Variant::without(0), Variant::without(1), Variant::without(2)]
    }

    pub fn by_name(name: &str) -> Option<Variant> {
        Variant::ablation_set().into_iter().find(|v| v.name == name)
    }

    pub fn weights(&self, base: &CostWeights) -> CostWeights {
        CostWeights {
            lambda_r: base.lambda_r * self.lambda_scale[0],
            lambda_s: base.lambda_s * self.lambda_scale[1],
            lambda_c: base.lambda_c * self.lambda_scale[2],
            ..*base
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub scenario: String,
    pub family: String,
    pub variant: String,
    pub success: bool,
    pub partial_successes: Vec<bool>,
    /// Trajectory samples over the attempted segments.
    pub steps: usize,
    /// Mean planning wall time per attempted segment.
    pub latency_ms: f64,
    pub reach: f64,
    pub smooth: f64,
    pub collide: f64,
    pub total: f64,
    pub objective_evals: usize,
    /// Set when the cell could not be planned at all.
    pub error: String,
}

impl RunMetrics {
    pub fn from_results(scenario: &Scenario, variant: &str, results: &[PlanResult]) -> Self {
        let attempted: Vec<&PlanResult> = results.iter().filter(|r| r.attempted).collect();
        let latency_ms = if attempted.is_empty() {
            0.0
        } else {
            attempted.iter().map(|r| r.wall_time_ms).sum::<f64>() / attempted.len() as f64
        };
        let partial_successes: Vec<bool> = results.iter().map(|r| r.converged).collect();
        RunMetrics {
            scenario: scenario.name.clone(),
            family: family_name(scenario),
            variant: variant.to_string(),
            success: partial_successes.iter().all(|&s| s),
            partial_successes,
            steps: attempted.iter().map(|r| r.trajectory.len()).sum(),
            latency_ms,
            reach: results.iter().map(|r| r.report.reach).sum(),
            smooth: results.iter().map(|r| r.report.smooth).sum(),
            collide: results.iter().map(|r| r.report.collide).sum(),
            total: results.iter().map(|r| r.report.total).sum(),
            objective_evals: results.iter().map(|r| r.objective_evals).sum(),
            error: String::new(),
        }
    }

    fn failed(scenario: &Scenario, variant: &str, error: String) -> Self {
        RunMetrics {
            scenario: scenario.name.clone(),
            family: family_name(scenario),
            variant: variant.to_string(),
            success: false,
            partial_successes: vec![false; scenario.waypoints.len()],
            steps: 0,
            latency_ms: 0.0,
            reach: 0.0,
            smooth: 0.0,
            collide: 0.0,
            total: 0.0,
            objective_evals: 0,
            error,
        }
    }
}

fn family_name(s: &Scenario) -> String {
    s.family.map_or_else(|| "custom".to_string(), |f| f.to_string())
}

/// One scenario x variant run.
#[derive(Debug, Clone)]
pub struct Cell {
    pub metrics: RunMetrics,
    pub segments: Vec<PlanResult>,
}

#[derive(Debug, Clone)]
pub struct SuiteTable {
    pub cells: Vec<Cell>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub family: String,
    pub variant: String,
    pub runs: usize,
    pub success_rate: f64,
    pub partial_success_rate: f64,
    pub mean_latency_ms: f64,
    pub mean_steps: f64,
    pub mean_total: f64,
}

impl SuiteTable {
    pub fn rows(&self) -> impl Iterator<Item = &RunMetrics> {
        self.cells.iter().map(|c| &c.metrics)
    }

    /// Means per (family, variant), then per variant over all families
    /// (family `all`). Variants keep their order of first appearance.
    pub fn aggregate(&self) -> Vec<AggregateRow> {
        let mut variants: Vec<&str> = Vec::new();
        let mut groups: BTreeMap<(usize, String), Vec<&RunMetrics>> = BTreeMap::new();
        for m in self.rows() {
            let vi = match variants.iter().position(|v| *v == m.variant) {
                Some(i) => i,
                None => {
                    variants.push(&m.variant);
                    variants.len() - 1
                }
            };
            groups.entry((vi, m.family.clone())).or_default().push(m);
            groups.entry((vi, "~all".to_string())).or_default().push(m);
        }
        groups
            .into_iter()
            .map(|((vi, family), rows)| {
                let n = rows.len() as f64;
                let segs: usize = rows.iter().map(|r| r.partial_successes.len()).sum();
                let ok: usize = rows.iter().map(|r| r.partial_successes.iter().filter(|&&s| s).count()).sum();
                AggregateRow {
                    family: family.trim_start_matches('~').to_string(),
                    variant: variants[vi].to_string(),
                    runs: rows.len(),
                    success_rate: rows.iter().filter(|r| r.success).count() as f64 / n,
                    partial_success_rate: if segs == 0 { 0.0 } else { ok as f64 / segs as f64 },
                    mean_latency_ms: rows.iter().map(|r| r.latency_ms).sum::<f64>() / n,
                    mean_steps: rows.iter().map(|r| r.steps as f64).sum::<f64>() / n,
                    mean_total: rows.iter().map(|r| r.total).sum::<f64>() / n,
                }
            })
            .collect()
    }
}

/// Plans every scenario under every variant. Scenarios run on the rayon pool;
/// cells come back in (scenario, variant) order. A cell that errors is
/// recorded as a failure and the suite carries on.
pub fn run_suite(scenarios: &[Scenario], variants: &[Variant], cfg: &PlannerConfig) -> Result<SuiteTable> {
    cfg.validate()?;
    if scenarios.is_empty() || variants.is_empty() {
        return Err(crate::Error::invalid("a suite needs at least one scenario and one variant"));
    }
    let cells = scenarios
        .par_iter()
        .map(|sc| run_scenario(sc, variants, cfg))
        .collect::<Vec<_>>()
        .into_iter()
        .flatten()
        .collect();
    Ok(SuiteTable { cells })
}

fn run_scenario(sc: &Scenario, variants: &[Variant], cfg: &PlannerConfig) -> Vec<Cell> {
    let prepared = match Prepared::new(sc.clone()) {
        Ok(p) => p,
        Err(e) => {
            return variants
                .iter()
                .map(|v| Cell { metrics: RunMetrics::failed(sc, &v.name, e.to_string()), segments: vec![] })
                .collect()
        }
    };
    variants
        .iter()
        .map(|v| {
            let weights = v.weights(&sc.weights);
            let ctx = prepared.ctx_with(&weights);
            let run_cfg = PlannerConfig {
                search_mode: v.search_mode,
                seed: derive_seed(cfg.seed, sc.rng_seed),
                ..cfg.clone()
            };
            match plan_episode(&sc.waypoints, &sc.start_state, &ctx, &run_cfg) {
                Ok(segments) => Cell { metrics: RunMetrics::from_results(sc, &v.name, &segments), segments },
                Err(e) => Cell { metrics: RunMetrics::failed(sc, &v.name, e.to_string()), segments: vec![] },
            }
        })
        .collect()
}
