//! Segment-wise whole-body planning between consecutive end-effector
//! waypoints.
//!
//! A segment is initialized by interpolating the end-effector from the
//! current waypoint to the next one with the base standing still. The
//! bi-level search then alternates two blocks: the upper block moves the base
//! of one sample at a time, scored against arm poses sampled around that
//! sample's end-effector target; the lower block moves the end-effector
//! target of one sample at a time with its base held fixed. The direct mode
//! anneals every free variable of the segment jointly instead.

use std::f64::consts::PI;
use std::time::Instant;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::anneal::{minimize, AnnealConfig, SearchSpace};
use crate::costs::{
    edge_smoothness, evaluate_targets, min_clearance, reachability_cost, sample_arm_candidates,
    state_collision, upper_objective, CostContext, Evaluation, ObjectiveReport, Trajectory,
    TrajectoryTargets, WholeBodyState,
};
use crate::error::{Error, Result};
use crate::field::PointScratch;
use crate::geometry::{gamma_to_base, gamma_to_world, pose_delta, BasePose, Pose3};
use crate::kinematics::solve_ik;

/// Two consecutive waypoints as the policy predicted them: both in the base
/// frame the robot had at prediction time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WaypointPair {
    pub q_current: Pose3,
    pub base_at_prediction: BasePose,
    pub q_next: Pose3,
    pub gripper_next: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SearchMode {
    BiLevel,
    Direct,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlannerConfig {
    /// Interpolation step, meters for translation and radians for rotation.
    pub step_size: f64,
    pub mu_s: f64,
    pub n_up: usize,
    pub n_low: usize,
    pub max_outer_rounds: usize,
    pub search_mode: SearchMode,
    /// Half-widths of the per-sample base box: x, y, yaw.
    pub base_bounds: [f64; 3],
    /// Half-widths of the end-effector perturbation box: meters, radians.
    pub ee_bounds: [f64; 2],
    /// Objective evaluations per block.
    pub max_evals: usize,
    pub anneal: AnnealConfig,
    pub seed: u64,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        PlannerConfig {
            step_size: 0.05,
            mu_s: 0.01,
            n_up: 5,
            n_low: 5,
            max_outer_rounds: 20,
            search_mode: SearchMode::BiLevel,
            base_bounds: [1.0, 1.0, PI],
            ee_bounds: [0.1, 0.3],
            max_evals: 300,
            anneal: AnnealConfig { local_max_iters: 3, ..AnnealConfig::default() },
            seed: 0,
        }
    }
}

impl PlannerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step_size > 0.0) || !(self.mu_s > 0.0) {
            return Err(Error::invalid("step_size and mu_s must be positive"));
        }
        if self.n_up == 0 || self.n_low == 0 || self.max_outer_rounds == 0 {
            return Err(Error::invalid("block iterations and outer rounds must be at least 1"));
        }
        if self.base_bounds.iter().chain(&self.ee_bounds).any(|h| !(*h > 0.0)) {
            return Err(Error::invalid("search half-widths must be positive"));
        }
        if self.max_evals < self.n_up.max(self.n_low) * 6 {
            return Err(Error::invalid("max_evals too small for the block iterations"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanResult {
    pub trajectory: Trajectory,
    /// World-frame end-effector targets the trajectory was solved for.
    pub targets: TrajectoryTargets,
    pub report: ObjectiveReport,
    pub converged: bool,
    /// False when the segment's start did not match its waypoint and no
    /// search was run.
    pub attempted: bool,
    pub outer_rounds_used: usize,
    pub wall_time_ms: f64,
    pub objective_evals: usize,
    /// Objective of the interpolation initialization.
    pub initial_total: f64,
}

/// SplitMix64 finalizer over `parent ^ tag`, for deriving independent seeds.
pub fn derive_seed(parent: u64, tag: u64) -> u64 {
    let mut z = parent ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Both waypoints in the world frame.
pub fn lift_waypoint(wp: &WaypointPair) -> Result<(Pose3, Pose3)> {
    Ok((
        gamma_to_world(&wp.base_at_prediction, &wp.q_current)?,
        gamma_to_world(&wp.base_at_prediction, &wp.q_next)?,
    ))
}

/// Number of interpolation steps between two world poses.
pub fn step_count(a: &Pose3, b: &Pose3, step_size: f64) -> usize {
    let (dp, dang) = pose_delta(a, b);
    let steps = |d: f64| (d / step_size - 1e-9).ceil().max(0.0) as usize;
    steps(dp).max(steps(dang)).max(1)
}

fn check_start(start: &WholeBodyState, q_start: &Pose3, ctx: &CostContext, cfg: &PlannerConfig) -> Result<()> {
    start.validate(ctx.chain)?;
    let ee = start.ee_world(ctx.chain)?;
    let gap = (ee.position() - q_start.position()).norm();
    if gap > 10.0 * cfg.mu_s {
        return Err(Error::invalid(format!(
            "start end-effector is {gap:.4} m from the segment's first waypoint"
        )));
    }
    Ok(())
}

/// Interpolated end-effector targets with the base held at the start pose.
/// The end points are the waypoints themselves.
pub fn init_targets(
    start: &WholeBodyState,
    q_start: &Pose3,
    q_end: &Pose3,
    gripper_end: f64,
    ctx: &CostContext,
    cfg: &PlannerConfig,
) -> Result<TrajectoryTargets> {
    check_start(start, q_start, ctx, cfg)?;
    let steps = step_count(q_start, q_end, cfg.step_size);
    let ee_world = (0..=steps)
        .map(|t| match t {
            0 => *q_start,
            t if t == steps => *q_end,
            t => q_start.interpolate(q_end, t as f64 / steps as f64),
        })
        .collect();
    let mut grippers = vec![start.gripper; steps + 1];
    grippers[steps] = gripper_end;
    Ok(TrajectoryTargets {
        bases: vec![start.base; steps + 1],
        ee_world,
        grippers,
    })
}

/// The interpolation initialization, with joints from warm-started IK.
pub fn init_trajectory(
    start: &WholeBodyState,
    q_start: &Pose3,
    q_end: &Pose3,
    ctx: &CostContext,
    cfg: &PlannerConfig,
) -> Result<Trajectory> {
    let targets = init_targets(start, q_start, q_end, start.gripper, ctx, cfg)?;
    Ok(evaluate_targets(&targets, &start.joints, ctx)?.trajectory)
}

struct Incumbent {
    targets: TrajectoryTargets,
    eval: Evaluation,
    converged: bool,
}

struct Segment<'a> {
    ctx: &'a CostContext<'a>,
    cfg: &'a PlannerConfig,
    start: &'a WholeBodyState,
    q_start: Pose3,
    q_end: Pose3,
    evals: usize,
}

impl Segment<'_> {
    fn evaluate(&self, targets: TrajectoryTargets) -> Result<Incumbent> {
        let eval = evaluate_targets(&targets, &self.start.joints, self.ctx)?;
        let converged = self.is_converged(&eval)?;
        Ok(Incumbent { targets, eval, converged })
    }

    /// Every pose reachable, no point inside an obstacle, and both achieved
    /// end points within `mu_s` of their waypoints.
    fn is_converged(&self, eval: &Evaluation) -> Result<bool> {
        if !eval.report.all_converged() || min_clearance(&eval.trajectory, self.ctx) < 0.0 {
            return Ok(false);
        }
        let chain = self.ctx.chain;
        let first = eval.trajectory.first().ee_world(chain)?;
        let last = eval.trajectory.last().ee_world(chain)?;
        Ok((first.position() - self.q_start.position()).norm() <= self.cfg.mu_s
            && (last.position() - self.q_end.position()).norm() <= self.cfg.mu_s)
    }

    fn anneal_cfg(&self, budget: usize, seed: u64) -> AnnealConfig {
        AnnealConfig {
            max_evals: budget,
            rng_seed: seed,
            record_history: false,
            ..self.cfg.anneal.clone()
        }
    }

    /// Re-places the base of sample `t` by candidate-set scoring.
    fn upper_step(&mut self, cur: &mut Incumbent, t: usize, seed: u64) -> Result<()> {
        let ctx = self.ctx;
        let anchor = cur.eval.trajectory.states()[t - 1].clone();
        let center = cur.targets.ee_world[t];
        let b = cur.targets.bases[t];
        let space = SearchSpace::around(&[b.x, b.y, b.yaw()], &self.cfg.base_bounds)?;
        let budget = (self.cfg.max_evals / self.cfg.n_up).max(3);
        let candidates = sample_arm_candidates(&center, ctx.weights, seed);
        let r = minimize(
            |x: &[f64]| {
                let base = BasePose::new(x[0], x[1], x[2]);
                upper_objective(&base, &candidates, &anchor, ctx).unwrap_or(f64::INFINITY)
            },
            &space,
            &self.anneal_cfg(budget, seed),
        )?;
        self.evals += r.evals_used;
        cur.targets.bases[t] = BasePose::new(r.x_best[0], r.x_best[1], r.x_best[2]);
        Ok(())
    }

    /// Moves the end-effector target of sample `t` with its base fixed,
    /// scoring the terms of the segment objective that depend on it.
    fn lower_step(&mut self, cur: &mut Incumbent, t: usize, seed: u64) -> Result<()> {
        let ctx = self.ctx;
        let w = ctx.weights;
        let states = cur.eval.trajectory.states();
        let prev = &states[t - 1];
        let next = &states[t + 1];
        let base = cur.targets.bases[t];
        let gripper = cur.targets.grippers[t];
        let center = cur.targets.ee_world[t];
        let [hp, hr] = self.cfg.ee_bounds;
        let space = SearchSpace::around(&[0.0; 6], &[hp, hp, hp, hr, hr, hr])?;
        let budget = (self.cfg.max_evals / self.cfg.n_low).max(6);
        let mut scratch = PointScratch::default();
        let r = minimize(
            |x: &[f64]| {
                let ee = center.perturbed(&Vector3::new(x[0], x[1], x[2]), &Vector3::new(x[3], x[4], x[5]));
                let Ok(local) = gamma_to_base(&base, &ee) else {
                    return f64::INFINITY;
                };
                let Ok(ik) = solve_ik(ctx.chain, &local, &prev.joints, w.n_max) else {
                    return f64::INFINITY;
                };
                let q = ik.joints.as_slice();
                let smooth = edge_smoothness(&prev.base, prev.joints.as_slice(), &base, q, w.yaw_weight)
                    + edge_smoothness(&base, q, &next.base, next.joints.as_slice(), w.yaw_weight);
                let state = WholeBodyState::new(base, ik.joints.clone(), gripper);
                w.weighted(reachability_cost(&ik, w), smooth, state_collision(&state, ctx, &mut scratch))
            },
            &space,
            &self.anneal_cfg(budget, seed),
        )?;
        self.evals += r.evals_used;
        let x = &r.x_best;
        cur.targets.ee_world[t] =
            center.perturbed(&Vector3::new(x[0], x[1], x[2]), &Vector3::new(x[3], x[4], x[5]));
        Ok(())
    }

    /// One joint anneal over every free variable: the bases of samples
    /// `1..=T`, end-effector offsets of samples `1..T`, and one gripper value
    /// per free sample (carried but not scored).
    fn direct_round(&mut self, cur: &Incumbent, seed: u64) -> Result<TrajectoryTargets> {
        let ctx = self.ctx;
        let steps = cur.targets.len() - 1;
        let [bx, by, byaw] = self.cfg.base_bounds;
        let [hp, hr] = self.cfg.ee_bounds;
        let mut center = Vec::new();
        let mut half = Vec::new();
        for b in &cur.targets.bases[1..] {
            center.extend([b.x, b.y, b.yaw()]);
            half.extend([bx, by, byaw]);
        }
        for _ in 1..steps {
            center.extend([0.0; 6]);
            half.extend([hp, hp, hp, hr, hr, hr]);
        }
        center.extend(vec![0.5; steps]);
        half.extend(vec![0.5; steps]);
        let space = SearchSpace::around(&center, &half)?;
        let decode = |x: &[f64]| {
            let mut t = cur.targets.clone();
            for s in 1..=steps {
                let o = 3 * (s - 1);
                t.bases[s] = BasePose::new(x[o], x[o + 1], x[o + 2]);
            }
            for s in 1..steps {
                let o = 3 * steps + 6 * (s - 1);
                t.ee_world[s] = cur.targets.ee_world[s]
                    .perturbed(&Vector3::new(x[o], x[o + 1], x[o + 2]), &Vector3::new(x[o + 3], x[o + 4], x[o + 5]));
            }
            t
        };
        let budget = (2 * self.cfg.max_evals).max(space.dimension());
        let r = minimize(
            |x: &[f64]| {
                evaluate_targets(&decode(x), &self.start.joints, ctx).map_or(f64::INFINITY, |e| e.report.total)
            },
            &space,
            &self.anneal_cfg(budget, seed),
        )?;
        self.evals += r.evals_used;
        Ok(decode(&r.x_best))
    }
}

fn better(candidate: &Incumbent, best: &Incumbent, initial_total: f64) -> bool {
    let (c, b) = (&candidate.eval.report, &best.eval.report);
    if candidate.converged && !best.converged {
        c.total <= initial_total
    } else {
        candidate.converged == best.converged && c.total < b.total
    }
}

/// Plans one segment. Running out of rounds is not an error: the best
/// trajectory found is returned with `converged = false`.
pub fn plan_segment(
    start: &WholeBodyState,
    wp: &WaypointPair,
    ctx: &CostContext,
    cfg: &PlannerConfig,
) -> Result<PlanResult> {
    let clock = Instant::now();
    cfg.validate()?;
    ctx.weights.validate()?;
    let (q_start, q_end) = lift_waypoint(wp)?;
    let targets = init_targets(start, &q_start, &q_end, wp.gripper_next, ctx, cfg)?;
    let mut seg = Segment { ctx, cfg, start, q_start, q_end, evals: 0 };

    let mut best = seg.evaluate(targets)?;
    let initial_total = best.eval.report.total;
    let steps = best.targets.len() - 1;
    let mut rounds = 0;
    let mut cur = seg.evaluate(best.targets.clone())?;
    let (mut up_cursor, mut low_cursor) = (0usize, 0usize);

    while !best.converged && rounds < cfg.max_outer_rounds {
        let round_seed = derive_seed(cfg.seed, rounds as u64);
        rounds += 1;
        match cfg.search_mode {
            SearchMode::BiLevel => {
                for k in 0..cfg.n_up {
                    let t = 1 + up_cursor % steps;
                    up_cursor += 1;
                    seg.upper_step(&mut cur, t, derive_seed(round_seed, (k as u64) << 32 | t as u64))?;
                    if up_cursor <= steps {
                        // samples not yet visited hold the latest placed base
                        let b = cur.targets.bases[t];
                        cur.targets.bases[t + 1..].fill(b);
                    }
                    cur = seg.evaluate(cur.targets)?;
                }
                if better(&cur, &best, initial_total) {
                    best = seg.evaluate(cur.targets.clone())?;
                }
                if best.converged {
                    break;
                }
                if steps > 1 {
                    for k in 0..cfg.n_low {
                        let t = 1 + low_cursor % (steps - 1);
                        low_cursor += 1;
                        let seed = derive_seed(round_seed, 1 << 48 | (k as u64) << 32 | t as u64);
                        seg.lower_step(&mut cur, t, seed)?;
                        cur = seg.evaluate(cur.targets)?;
                    }
                    if better(&cur, &best, initial_total) {
                        best = seg.evaluate(cur.targets.clone())?;
                    }
                }
            }
            SearchMode::Direct => {
                let targets = seg.direct_round(&best, round_seed)?;
                let candidate = seg.evaluate(targets)?;
                if better(&candidate, &best, initial_total) {
                    best = candidate;
                }
            }
        }
    }

    Ok(PlanResult {
        trajectory: best.eval.trajectory,
        targets: best.targets,
        report: best.eval.report,
        converged: best.converged,
        attempted: true,
        outer_rounds_used: rounds,
        wall_time_ms: clock.elapsed().as_secs_f64() * 1e3,
        objective_evals: seg.evals,
        initial_total,
    })
}

/// Plans the segments in order, each from the previous segment's final
/// state. A segment whose start does not match its waypoint (because the
/// previous one failed) is reported as not attempted.
pub fn plan_episode(
    waypoints: &[WaypointPair],
    start: &WholeBodyState,
    ctx: &CostContext,
    cfg: &PlannerConfig,
) -> Result<Vec<PlanResult>> {
    if waypoints.is_empty() {
        return Err(Error::invalid("no waypoints to plan"));
    }
    let mut results: Vec<PlanResult> = Vec::with_capacity(waypoints.len());
    let mut state = start.clone();
    for (k, wp) in waypoints.iter().enumerate() {
        let seg_cfg = PlannerConfig {
            seed: if k == 0 { cfg.seed } else { derive_seed(cfg.seed, k as u64) },
            ..cfg.clone()
        };
        let (q_start, _) = lift_waypoint(wp)?;
        let result = match check_start(&state, &q_start, ctx, &seg_cfg) {
            Ok(()) => plan_segment(&state, wp, ctx, &seg_cfg)?,
            Err(Error::InvalidArgument(_)) => skipped(&state, wp, ctx)?,
            Err(e) => return Err(e),
        };
        state = result.trajectory.last().clone();
        results.push(result);
    }
    Ok(results)
}

fn skipped(state: &WholeBodyState, wp: &WaypointPair, ctx: &CostContext) -> Result<PlanResult> {
    let ee = state.ee_world(ctx.chain)?;
    let targets = TrajectoryTargets {
        bases: vec![state.base; 2],
        ee_world: vec![ee; 2],
        grippers: vec![state.gripper, wp.gripper_next],
    };
    let eval = evaluate_targets(&targets, &state.joints, ctx)?;
    Ok(PlanResult {
        initial_total: eval.report.total,
        trajectory: eval.trajectory,
        targets,
        report: eval.report,
        converged: false,
        attempted: false,
        outer_rounds_used: 0,
        wall_time_ms: 0.0,
        objective_evals: 0,
    })
}
