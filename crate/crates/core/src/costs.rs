//! The feasibility objective: reachability, smoothness and collision terms,
//! their weighted total, and the base-placement score of the upper level.

use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{materialize_into, DistanceField, PointScratch, QueryPointSet};
use crate::geometry::{gamma_to_base, gamma_to_world, BasePose, Pose3};
use crate::kinematics::{
    forward_kinematics, solve_ik, IkResult, JointVector, KinematicChain, DEFAULT_IK_MAX_ITERS,
};

/// One trajectory sample: where the base is, how the arm is bent, and how far
/// the gripper is open (`0` closed, `1` open).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WholeBodyState {
    pub base: BasePose,
    pub joints: JointVector,
    pub gripper: f64,
}

impl WholeBodyState {
    pub fn new(base: BasePose, joints: JointVector, gripper: f64) -> Self {
        WholeBodyState { base, joints, gripper }
    }

    pub fn validate(&self, chain: &KinematicChain) -> Result<()> {
        if !self.base.is_finite() {
            return Err(Error::invalid("base pose is not finite"));
        }
        if self.joints.len() != chain.dof() || self.joints.0.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("joint vector does not fit the chain"));
        }
        if !chain.within_limits(&self.joints) {
            return Err(Error::invalid(format!("joints {:?} violate limits", self.joints.0)));
        }
        if !(0.0..=1.0).contains(&self.gripper) {
            return Err(Error::invalid(format!("gripper openness {} outside [0, 1]", self.gripper)));
        }
        Ok(())
    }

    /// End-effector pose in the world frame.
    pub fn ee_world(&self, chain: &KinematicChain) -> Result<Pose3> {
        gamma_to_world(&self.base, &forward_kinematics(chain, &self.joints)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawTrajectory", into = "RawTrajectory")]
pub struct Trajectory {
    states: Vec<WholeBodyState>,
}

#[derive(Serialize, Deserialize)]
struct RawTrajectory {
    states: Vec<WholeBodyState>,
}

impl TryFrom<RawTrajectory> for Trajectory {
    type Error = Error;

    fn try_from(raw: RawTrajectory) -> Result<Self> {
        Trajectory::new(raw.states)
    }
}

impl From<Trajectory> for RawTrajectory {
    fn from(t: Trajectory) -> Self {
        RawTrajectory { states: t.states }
    }
}

impl Trajectory {
    pub fn new(states: Vec<WholeBodyState>) -> Result<Self> {
        if states.len() < 2 {
            return Err(Error::invalid("a trajectory needs at least two states"));
        }
        Ok(Trajectory { states })
    }

    pub fn states(&self) -> &[WholeBodyState] {
        &self.states
    }

    pub fn into_states(self) -> Vec<WholeBodyState> {
        self.states
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn first(&self) -> &WholeBodyState {
        &self.states[0]
    }

    pub fn last(&self) -> &WholeBodyState {
        &self.states[self.states.len() - 1]
    }

    /// Number of steps `T` (one less than the number of states).
    pub fn steps(&self) -> usize {
        self.states.len() - 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CostWeights {
    pub lambda_r: f64,
    pub lambda_s: f64,
    pub lambda_c: f64,
    /// Clearance below which query points are penalized, meters.
    pub epsilon0: f64,
    /// Reachability cost of a pose the IK solver could not reach.
    pub c0: f64,
    /// IK iteration budget.
    pub n_max: usize,
    pub alpha: f64,
    pub k_top: usize,
    /// Size of the sampled arm-candidate set.
    pub n_candidates: usize,
    pub sigma_pos: f64,
    pub sigma_rot: f64,
    /// Scale on the wrapped yaw difference inside the base smoothness term.
    pub yaw_weight: f64,
}

impl Default for CostWeights {
    fn default() -> Self {
        CostWeights {
            lambda_r: 10.0,
            lambda_s: 1.0,
            lambda_c: 0.6,
            epsilon0: 0.1,
            c0: 1e3,
            n_max: DEFAULT_IK_MAX_ITERS,
            alpha: 0.5,
            k_top: 3,
            n_candidates: 16,
            sigma_pos: 0.05,
            sigma_rot: 0.1,
            yaw_weight: 1.0,
        }
    }
}

impl CostWeights {
    /// Term weights may be zero (that is how a term is ablated) but not
    /// negative.
    pub fn validate(&self) -> Result<()> {
        let nonneg = [
            self.lambda_r,
            self.lambda_s,
            self.lambda_c,
            self.alpha,
            self.sigma_pos,
            self.sigma_rot,
            self.yaw_weight,
        ];
        if nonneg.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::invalid("cost weights must be finite and non-negative"));
        }
        if !(self.epsilon0 > 0.0) {
            return Err(Error::invalid("epsilon0 must be positive"));
        }
        if !(self.c0 >= 1e3) || !self.c0.is_finite() {
            return Err(Error::invalid("c0 must be at least 1e3"));
        }
        if self.n_max == 0 || self.k_top == 0 || self.n_candidates < self.k_top {
            return Err(Error::invalid("need n_max >= 1 and n_candidates >= k_top >= 1"));
        }
        Ok(())
    }

    pub fn weighted(&self, reach: f64, smooth: f64, collide: f64) -> f64 {
        self.lambda_r * reach + self.lambda_s * smooth + self.lambda_c * collide
    }
}

/// Everything the objective reads. Shared immutably across threads.
#[derive(Debug, Clone, Copy)]
pub struct CostContext<'a> {
    pub chain: &'a KinematicChain,
    pub field: &'a DistanceField,
    pub qps: &'a QueryPointSet,
    pub weights: &'a CostWeights,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct StateCosts {
    pub reach: f64,
    /// Smoothness of the edge arriving at this state; zero for the first.
    pub smooth: f64,
    pub collide: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveReport {
    pub reach: f64,
    pub smooth: f64,
    pub collide: f64,
    pub total: f64,
    pub ik_results: Vec<IkResult>,
    pub per_state: Vec<StateCosts>,
}

impl ObjectiveReport {
    pub fn all_converged(&self) -> bool {
        self.ik_results.iter().all(IkResult::converged)
    }
}

pub fn reachability_cost(ik: &IkResult, w: &CostWeights) -> f64 {
    if ik.converged() {
        ik.iterations as f64 / w.n_max as f64
    } else {
        w.c0
    }
}

/// `‖θ_b − θ_a‖ + ‖x_b − x_a‖` with the yaw difference wrapped.
pub fn edge_smoothness(
    a_base: &BasePose,
    a_joints: &[f64],
    b_base: &BasePose,
    b_joints: &[f64],
    yaw_weight: f64,
) -> f64 {
    let arm = a_joints
        .iter()
        .zip(b_joints)
        .map(|(a, b)| (b - a) * (b - a))
        .sum::<f64>()
        .sqrt();
    let [dx, dy, dyaw] = a_base.difference(b_base);
    let dyaw = dyaw * yaw_weight;
    arm + (dx * dx + dy * dy + dyaw * dyaw).sqrt()
}

pub fn smoothness_cost(traj: &Trajectory, ik_joints: &[JointVector], w: &CostWeights) -> Result<f64> {
    if ik_joints.len() != traj.len() {
        return Err(Error::invalid(format!(
            "{} joint vectors for {} states",
            ik_joints.len(),
            traj.len()
        )));
    }
    let s = traj.states();
    Ok((1..s.len())
        .map(|t| {
            edge_smoothness(
                &s[t - 1].base,
                ik_joints[t - 1].as_slice(),
                &s[t].base,
                ik_joints[t].as_slice(),
                w.yaw_weight,
            )
        })
        .sum())
}

pub fn point_penalty(distance: f64, epsilon0: f64) -> f64 {
    (epsilon0 - distance).max(0.0)
}

/// Collision penalty of a single state, summed over its query points.
pub fn state_collision(state: &WholeBodyState, ctx: &CostContext, scratch: &mut PointScratch) -> f64 {
    materialize_into(ctx.qps, state, ctx.chain, scratch);
    scratch
        .points
        .iter()
        .map(|p| point_penalty(ctx.field.query(p), ctx.weights.epsilon0))
        .sum()
}

/// Smallest field distance over the query points of a state.
pub fn state_clearance(state: &WholeBodyState, ctx: &CostContext, scratch: &mut PointScratch) -> f64 {
    materialize_into(ctx.qps, state, ctx.chain, scratch);
    scratch.points.iter().map(|p| ctx.field.query(p)).fold(f64::INFINITY, f64::min)
}

pub fn collision_cost(traj: &Trajectory, ctx: &CostContext) -> f64 {
    let mut scratch = PointScratch::default();
    traj.states().iter().map(|s| state_collision(s, ctx, &mut scratch)).sum()
}

pub fn min_clearance(traj: &Trajectory, ctx: &CostContext) -> f64 {
    let mut scratch = PointScratch::default();
    traj.states()
        .iter()
        .map(|s| state_clearance(s, ctx, &mut scratch))
        .fold(f64::INFINITY, f64::min)
}

/// Per-sample base poses and world-frame end-effector targets; the joints are
/// whatever IK makes of them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryTargets {
    pub bases: Vec<BasePose>,
    pub ee_world: Vec<Pose3>,
    pub grippers: Vec<f64>,
}

impl TrajectoryTargets {
    pub fn len(&self) -> usize {
        self.bases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bases.is_empty()
    }

    fn check(&self) -> Result<()> {
        let n = self.bases.len();
        if n < 2 || self.ee_world.len() != n || self.grippers.len() != n {
            return Err(Error::invalid("trajectory targets need matching lengths of at least 2"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub trajectory: Trajectory,
    pub report: ObjectiveReport,
}

/// Solves IK for every sample, each warm-started from the previous solution
/// (the first from `start_joints`), and prices the result.
pub fn evaluate_targets(
    targets: &TrajectoryTargets,
    start_joints: &JointVector,
    ctx: &CostContext,
) -> Result<Evaluation> {
    targets.check()?;
    let w = ctx.weights;
    let mut scratch = PointScratch::default();
    let mut states: Vec<WholeBodyState> = Vec::with_capacity(targets.len());
    let mut ik_results = Vec::with_capacity(targets.len());
    let mut per_state = Vec::with_capacity(targets.len());
    for t in 0..targets.len() {
        let base = targets.bases[t];
        let local = gamma_to_base(&base, &targets.ee_world[t])?;
        let seed = states.last().map_or(start_joints, |s| &s.joints);
        let ik = solve_ik(ctx.chain, &local, seed, w.n_max)?;
        let state = WholeBodyState::new(base, ik.joints.clone(), targets.grippers[t]);
        let smooth = states.last().map_or(0.0, |prev| {
            edge_smoothness(
                &prev.base,
                prev.joints.as_slice(),
                &state.base,
                state.joints.as_slice(),
                w.yaw_weight,
            )
        });
        per_state.push(StateCosts {
            reach: reachability_cost(&ik, w),
            smooth,
            collide: state_collision(&state, ctx, &mut scratch),
        });
        ik_results.push(ik);
        states.push(state);
    }
    let reach = per_state.iter().map(|c| c.reach).sum();
    let smooth = per_state.iter().map(|c| c.smooth).sum();
    let collide = per_state.iter().map(|c| c.collide).sum();
    Ok(Evaluation {
        trajectory: Trajectory::new(states)?,
        report: ObjectiveReport {
            reach,
            smooth,
            collide,
            total: w.weighted(reach, smooth, collide),
            ik_results,
            per_state,
        },
    })
}

/// The whole-segment objective of a trajectory. IK targets are the states'
/// own end-effector poses; the solver is warm-started along the trajectory,
/// so the reported joints may differ from the input joints.
pub fn total_objective(traj: &Trajectory, ctx: &CostContext) -> Result<ObjectiveReport> {
    let mut targets = TrajectoryTargets {
        bases: Vec::with_capacity(traj.len()),
        ee_world: Vec::with_capacity(traj.len()),
        grippers: Vec::with_capacity(traj.len()),
    };
    for s in traj.states() {
        targets.bases.push(s.base);
        targets.ee_world.push(s.ee_world(ctx.chain)?);
        targets.grippers.push(s.gripper);
    }
    Ok(evaluate_targets(&targets, &traj.first().joints, ctx)?.report)
}

/// Single-pose objective `O(x_b, x_e)`: reachability of `ee_world` from
/// `base`, smoothness against `anchor`, and collision at the solved pose.
pub fn pose_objective(
    base: &BasePose,
    ee_world: &Pose3,
    anchor: &WholeBodyState,
    ctx: &CostContext,
    scratch: &mut PointScratch,
) -> Result<f64> {
    let w = ctx.weights;
    let ik = solve_ik(ctx.chain, &gamma_to_base(base, ee_world)?, &anchor.joints, w.n_max)?;
    let smooth = edge_smoothness(
        &anchor.base,
        anchor.joints.as_slice(),
        base,
        ik.joints.as_slice(),
        w.yaw_weight,
    );
    let reach = reachability_cost(&ik, w);
    let state = WholeBodyState::new(*base, ik.joints, anchor.gripper);
    Ok(w.weighted(reach, smooth, state_collision(&state, ctx, scratch)))
}

/// Sum over all candidates plus `alpha` times the sum of the `k_top` lowest;
/// equal values are ranked by index.
pub fn aggregate_upper(values: &[f64], alpha: f64, k_top: usize) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::invalid("empty candidate set"));
    }
    if k_top == 0 || k_top > values.len() {
        return Err(Error::invalid(format!(
            "k_top = {k_top} with {} candidates",
            values.len()
        )));
    }
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
    let all: f64 = values.iter().sum();
    let top: f64 = order[..k_top].iter().map(|&i| values[i]).sum();
    Ok(all + alpha * top)
}

/// Upper-level score of a base pose against sampled arm candidates.
pub fn upper_objective(
    base: &BasePose,
    candidates: &[Pose3],
    anchor: &WholeBodyState,
    ctx: &CostContext,
) -> Result<f64> {
    if candidates.is_empty() {
        return Err(Error::invalid("empty candidate set"));
    }
    let mut scratch = PointScratch::default();
    let values = candidates
        .iter()
        .map(|c| pose_objective(base, c, anchor, ctx, &mut scratch))
        .collect::<Result<Vec<_>>>()?;
    aggregate_upper(&values, ctx.weights.alpha, ctx.weights.k_top)
}

/// Gaussian perturbations of `center` in world-frame position and rotation.
pub fn sample_arm_candidates(center: &Pose3, w: &CostWeights, seed: u64) -> Vec<Pose3> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pos = Normal::new(0.0, w.sigma_pos).expect("sigma_pos validated");
    let rot = Normal::new(0.0, w.sigma_rot).expect("sigma_rot validated");
    (0..w.n_candidates)
        .map(|_| {
            let dp = Vector3::from_fn(|_, _| pos.sample(&mut rng));
            let dr = Vector3::from_fn(|_, _| rot.sample(&mut rng));
            center.perturbed(&dp, &dr)
        })
        .collect()
}
