//! Serial-chain forward kinematics and a damped-least-squares IK solver.
//!
//! Joint `j` rotates about `axis` in the frame reached after joints
//! `0..j`; `offset` then carries that rotated frame to joint `j + 1` (or to
//! the tool flange for the last joint). With every joint at zero the chain is
//! the product of its offsets.

use nalgebra::{Isometry3, Matrix6, OMatrix, Unit, Vector3, Vector6, Dyn, U6};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{axis_rotation, Pose3};

pub const IK_TOL_POS: f64 = 1e-3;
pub const IK_TOL_ROT: f64 = 1e-2;
pub const IK_DAMPING: f64 = 1e-3;
pub const DEFAULT_IK_MAX_ITERS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JointLimits {
    pub lo: f64,
    pub hi: f64,
}

impl JointLimits {
    pub fn clamp(&self, q: f64) -> f64 {
        q.clamp(self.lo, self.hi)
    }

    pub fn contains(&self, q: f64) -> bool {
        q >= self.lo && q <= self.hi
    }
}

fn default_link_radius() -> f64 {
    0.04
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Link {
    pub offset: Pose3,
    pub axis: Unit<Vector3<f64>>,
    pub limits: JointLimits,
    /// Radius of the capsule bounding this link's body.
    #[serde(default = "default_link_radius")]
    pub radius: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawChain", into = "RawChain")]
pub struct KinematicChain {
    links: Vec<Link>,
    base_mount: Pose3,
}

#[derive(Serialize, Deserialize)]
struct RawChain {
    base_mount: Pose3,
    links: Vec<Link>,
}

impl TryFrom<RawChain> for KinematicChain {
    type Error = Error;
    fn try_from(raw: RawChain) -> Result<Self> {
        KinematicChain::new(raw.links, raw.base_mount)
    }
}

impl From<KinematicChain> for RawChain {
    fn from(c: KinematicChain) -> Self {
        RawChain {
            base_mount: c.base_mount,
            links: c.links,
        }
    }
}

impl KinematicChain {
    pub fn new(links: Vec<Link>, base_mount: Pose3) -> Result<Self> {
        if links.len() < 2 {
            return Err(Error::invalid("a kinematic chain needs at least 2 joints"));
        }
        for (i, link) in links.iter().enumerate() {
            if !(link.limits.lo < link.limits.hi) {
                return Err(Error::invalid(format!("joint {i}: limits need lo < hi")));
            }
            if !((link.axis.norm() - 1.0).abs() < 1e-9) {
                return Err(Error::invalid(format!("joint {i}: axis is not unit length")));
            }
            if !link.offset.is_finite() || !(link.radius > 0.0) {
                return Err(Error::invalid(format!("joint {i}: bad offset or radius")));
            }
        }
        let chain = KinematicChain { links, base_mount };
        if !(chain.total_reach() > 0.0) {
            return Err(Error::invalid("chain has zero total reach"));
        }
        Ok(chain)
    }

    /// Six-joint arm comparable to a compact collaborative arm: ~0.9 m of
    /// links on a mount 0.2 m above the base origin.
    pub fn reference_arm() -> Self {
        use std::f64::consts::PI;
        let z = Vector3::z_axis();
        let y = Vector3::y_axis();
        let x = Vector3::x_axis();
        let link = |axis, offset: [f64; 3], lo: f64, hi: f64, radius| Link {
            offset: Pose3::from_translation(offset[0], offset[1], offset[2]),
            axis,
            limits: JointLimits { lo, hi },
            radius,
        };
        let links = vec![
            link(z, [0.0, 0.0, 0.15], -PI, PI, 0.06),
            link(y, [0.35, 0.0, 0.0], -2.2, 2.2, 0.05),
            link(y, [0.30, 0.0, 0.0], -2.6, 2.6, 0.04),
            link(x, [0.04, 0.0, 0.0], -PI, PI, 0.04),
            link(y, [0.04, 0.0, 0.0], -2.2, 2.2, 0.04),
            link(x, [0.02, 0.0, 0.0], -PI, PI, 0.03),
        ];
        KinematicChain::new(links, Pose3::from_translation(0.0, 0.0, 0.2))
            .expect("reference arm is valid")
    }

    pub fn links(&self) -> &[Link] {
        &self.links
    }

    pub fn base_mount(&self) -> &Pose3 {
        &self.base_mount
    }

    pub fn dof(&self) -> usize {
        self.links.len()
    }

    /// Sum of link translation norms.
    pub fn total_reach(&self) -> f64 {
        self.links.iter().map(|l| l.offset.position().norm()).sum()
    }

    pub fn clamp(&self, q: &mut JointVector) {
        for (v, link) in q.0.iter_mut().zip(&self.links) {
            *v = link.limits.clamp(*v);
        }
    }

    pub fn within_limits(&self, q: &JointVector) -> bool {
        q.len() == self.dof()
            && q.0
                .iter()
                .zip(&self.links)
                .all(|(v, l)| v.is_finite() && l.limits.contains(*v))
    }

    fn check_len(&self, q: &JointVector) -> Result<()> {
        if q.len() != self.dof() {
            return Err(Error::invalid(format!(
                "joint vector has {} entries, chain has {} joints",
                q.len(),
                self.dof()
            )));
        }
        Ok(())
    }

    /// Fills `frames` with the frame of each joint *after* its rotation (the
    /// frame its link body is described in) and returns the tool frame, all
    /// in the base frame. `q` must have `dof()` entries.
    pub fn link_frames(&self, q: &[f64], frames: &mut Vec<Isometry3<f64>>) -> Isometry3<f64> {
        frames.clear();
        let mut t = self.base_mount.to_isometry();
        for (link, &angle) in self.links.iter().zip(q) {
            t *= Isometry3::from_parts(Default::default(), axis_rotation(&link.axis, angle));
            frames.push(t);
            t *= link.offset.to_isometry();
        }
        t
    }

    fn tool_frame(&self, q: &[f64]) -> Isometry3<f64> {
        let mut t = self.base_mount.to_isometry();
        for (link, &angle) in self.links.iter().zip(q) {
            t *= Isometry3::from_parts(Default::default(), axis_rotation(&link.axis, angle));
            t *= link.offset.to_isometry();
        }
        t
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct JointVector(pub Vec<f64>);

impl JointVector {
    pub fn zeros(n: usize) -> Self {
        JointVector(vec![0.0; n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn distance(&self, other: &JointVector) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }
}

impl From<Vec<f64>> for JointVector {
    fn from(v: Vec<f64>) -> Self {
        JointVector(v)
    }
}

pub fn forward_kinematics(chain: &KinematicChain, q: &JointVector) -> Result<Pose3> {
    chain.check_len(q)?;
    Ok(Pose3::from_isometry(&chain.tool_frame(&q.0)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum IkStatus {
    Converged,
    IterationBudgetExceeded,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Residual {
    pub translation: f64,
    pub rotation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IkResult {
    pub status: IkStatus,
    pub joints: JointVector,
    /// Number of damped-least-squares updates performed.
    pub iterations: usize,
    pub residual: Residual,
}

impl IkResult {
    pub fn converged(&self) -> bool {
        self.status == IkStatus::Converged
    }
}

/// Tuning knobs of the damped-least-squares update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IkSettings {
    pub tol_pos: f64,
    pub tol_rot: f64,
    pub damping: f64,
    /// Largest per-joint change allowed in one update, radians.
    pub max_joint_step: f64,
    /// Task-space error is clamped to these norms before each update.
    pub max_pos_error: f64,
    pub max_rot_error: f64,
    /// When the weighted error has not dropped below `stall_ratio` times its
    /// value `stall_window` updates ago, the iterate is re-seeded.
    pub stall_window: usize,
    pub stall_ratio: f64,
}

impl Default for IkSettings {
    fn default() -> Self {
        IkSettings {
            tol_pos: IK_TOL_POS,
            tol_rot: IK_TOL_ROT,
            damping: IK_DAMPING,
            max_joint_step: 1.0,
            max_pos_error: 0.2,
            max_rot_error: 0.5,
            stall_window: 6,
            stall_ratio: 0.8,
        }
    }
}

/// Damped least squares on the 6-D pose error with joint-limit clamping
/// after every update. A stalled iterate is moved to a fresh configuration;
/// that jump counts as an update. Targets farther from the arm root than the
/// chain's total reach are reported unreachable without iterating.
pub fn solve_ik(
    chain: &KinematicChain,
    target: &Pose3,
    seed: &JointVector,
    max_iters: usize,
) -> Result<IkResult> {
    solve_ik_with(chain, target, seed, max_iters, &IkSettings::default())
}

pub fn solve_ik_with(
    chain: &KinematicChain,
    target: &Pose3,
    seed: &JointVector,
    max_iters: usize,
    settings: &IkSettings,
) -> Result<IkResult> {
    chain.check_len(seed)?;
    if !target.is_finite() {
        return Err(Error::invalid("IK target is not finite"));
    }
    let n = chain.dof();
    let mut q = seed.clone();
    chain.clamp(&mut q);

    let target_pos = *target.position();
    let target_rot = *target.orientation();
    let mut frames = Vec::with_capacity(n);

    let root = chain.base_mount.position();
    if (target_pos - root).norm() > chain.total_reach() + settings.tol_pos {
        let tool = chain.tool_frame(&q.0);
        let (translation, rotation) = pose_error(&tool, &target_pos, &target_rot);
        return Ok(IkResult {
            status: IkStatus::IterationBudgetExceeded,
            joints: q,
            iterations: 0,
            residual: Residual {
                translation: translation.norm(),
                rotation: rotation.norm(),
            },
        });
    }

    let mut jac = OMatrix::<f64, U6, Dyn>::zeros(n);
    let mut iterations = 0;
    let mut history: Vec<f64> = Vec::with_capacity(max_iters + 1);
    let mut restarts = 0u64;
    let mut since_restart = 0usize;
    loop {
        let tool = chain.link_frames(&q.0, &mut frames);
        let (ep, er) = pose_error(&tool, &target_pos, &target_rot);
        let residual = Residual {
            translation: ep.norm(),
            rotation: er.norm(),
        };
        let weighted = residual.translation / settings.tol_pos + residual.rotation / settings.tol_rot;
        history.push(weighted);
        if residual.translation <= settings.tol_pos && residual.rotation <= settings.tol_rot {
            return Ok(IkResult {
                status: IkStatus::Converged,
                joints: q,
                iterations,
                residual,
            });
        }
        if iterations == max_iters {
            return Ok(IkResult {
                status: IkStatus::IterationBudgetExceeded,
                joints: q,
                iterations,
                residual,
            });
        }

        if since_restart >= settings.stall_window {
            let then = history[history.len() - 1 - settings.stall_window];
            if weighted > settings.stall_ratio * then {
                restarts += 1;
                reseed(chain, &mut q, restarts);
                since_restart = 0;
                iterations += 1;
                continue;
            }
        }
        since_restart += 1;

        let p_tool = tool.translation.vector;
        for (j, (frame, link)) in frames.iter().zip(&chain.links).enumerate() {
            let axis = frame.rotation * link.axis.into_inner();
            let lin = axis.cross(&(p_tool - frame.translation.vector));
            jac.fixed_view_mut::<3, 1>(0, j).copy_from(&lin);
            jac.fixed_view_mut::<3, 1>(3, j).copy_from(&axis);
        }
        let ep = clamp_norm(ep, settings.max_pos_error);
        let er = clamp_norm(er, settings.max_rot_error);
        let err = Vector6::new(ep.x, ep.y, ep.z, er.x, er.y, er.z);
        let jjt: Matrix6<f64> = &jac * jac.transpose() + Matrix6::identity() * settings.damping;
        let Some(chol) = jjt.cholesky() else {
            // JJ^T + λI is positive definite; this only triggers on NaN input.
            return Err(Error::invalid("IK normal equations are not positive definite"));
        };
        let mut dq = jac.transpose() * chol.solve(&err);
        let largest = dq.amax();
        if largest > settings.max_joint_step {
            dq *= settings.max_joint_step / largest;
        }
        for (v, d) in q.0.iter_mut().zip(dq.iter()) {
            *v += d;
        }
        chain.clamp(&mut q);
        iterations += 1;
    }
}

/// Deterministic jump to a new starting configuration: a low-discrepancy
/// point inside the joint limits, keyed by the restart count.
fn reseed(chain: &KinematicChain, q: &mut JointVector, restart: u64) {
    // additive recurrence with irrational steps (Kronecker sequence)
    const STEPS: [f64; 8] = [
        0.618_033_988_749_894_9,
        0.414_213_562_373_095_1,
        0.732_050_807_568_877_2,
        0.236_067_977_499_789_7,
        0.645_751_311_064_590_6,
        0.316_624_790_355_399_8,
        0.162_277_660_168_379_5,
        0.872_983_346_207_416_9,
    ];
    for (j, (v, link)) in q.0.iter_mut().zip(&chain.links).enumerate() {
        let u = (0.5 + restart as f64 * STEPS[j % STEPS.len()]).fract();
        let (lo, hi) = (link.limits.lo, link.limits.hi);
        *v = lo + (hi - lo) * (0.1 + 0.8 * u);
    }
}

fn clamp_norm(v: Vector3<f64>, max: f64) -> Vector3<f64> {
    let n = v.norm();
    if n > max {
        v * (max / n)
    } else {
        v
    }
}

fn pose_error(
    tool: &Isometry3<f64>,
    target_pos: &Vector3<f64>,
    target_rot: &nalgebra::UnitQuaternion<f64>,
) -> (Vector3<f64>, Vector3<f64>) {
    let ep = target_pos - tool.translation.vector;
    let er = (target_rot * tool.rotation.inverse()).scaled_axis();
    (ep, er)
}
