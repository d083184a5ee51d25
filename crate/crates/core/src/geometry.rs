//! Rigid-body poses, the planar base pose, and the base/world frame changes.
//!
//! The mobile base moves in SE(2); everything attached to it (the arm, the
//! end-effector, waypoints predicted by the policy) lives in SE(3). Lifting a
//! [`BasePose`] into a [`Pose3`] and composing gives the world-frame pose of
//! anything expressed in the base frame.

use std::f64::consts::{PI, TAU};

use nalgebra::{Isometry3, Quaternion, Translation3, Unit, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Wraps an angle to `(-pi, pi]`.
pub fn wrap_angle(angle: f64) -> f64 {
    let r = angle.rem_euclid(TAU);
    if r > PI {
        r - TAU
    } else {
        r
    }
}

/// Rigid transform with a canonical (`w >= 0`) unit quaternion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawPose3", into = "RawPose3")]
pub struct Pose3 {
    position: Vector3<f64>,
    orientation: UnitQuaternion<f64>,
}

#[derive(Serialize, Deserialize)]
struct RawPose3 {
    position: [f64; 3],
    /// `[w, x, y, z]`
    orientation: [f64; 4],
}

impl TryFrom<RawPose3> for Pose3 {
    type Error = Error;

    fn try_from(raw: RawPose3) -> Result<Self> {
        Pose3::from_parts(raw.position, raw.orientation)
    }
}

impl From<Pose3> for RawPose3 {
    fn from(p: Pose3) -> Self {
        let q = p.orientation.quaternion();
        RawPose3 {
            position: [p.position.x, p.position.y, p.position.z],
            orientation: [q.w, q.i, q.j, q.k],
        }
    }
}

fn canonical(q: UnitQuaternion<f64>) -> UnitQuaternion<f64> {
    let q = q.into_inner();
    let q = if q.w < 0.0 { -q } else { q };
    UnitQuaternion::new_normalize(q)
}

impl Pose3 {
    pub fn new(position: Vector3<f64>, orientation: UnitQuaternion<f64>) -> Self {
        Pose3 {
            position,
            orientation: canonical(orientation),
        }
    }

    /// Builds a pose from raw arrays, rejecting non-finite values and
    /// quaternions that are not close to unit norm.
    pub fn from_parts(position: [f64; 3], wxyz: [f64; 4]) -> Result<Self> {
        if position.iter().chain(wxyz.iter()).any(|v| !v.is_finite()) {
            return Err(Error::invalid("pose has non-finite components"));
        }
        let q = Quaternion::new(wxyz[0], wxyz[1], wxyz[2], wxyz[3]);
        let norm = q.norm();
        if (norm - 1.0).abs() > 1e-6 {
            return Err(Error::invalid(format!(
                "orientation quaternion has norm {norm}, expected 1"
            )));
        }
        Ok(Pose3::new(
            Vector3::from(position),
            UnitQuaternion::new_normalize(q),
        ))
    }

    pub fn identity() -> Self {
        Pose3 {
            position: Vector3::zeros(),
            orientation: UnitQuaternion::identity(),
        }
    }

    pub fn from_translation(x: f64, y: f64, z: f64) -> Self {
        Pose3::new(Vector3::new(x, y, z), UnitQuaternion::identity())
    }

    pub fn from_isometry(iso: &Isometry3<f64>) -> Self {
        Pose3::new(iso.translation.vector, iso.rotation)
    }

    pub fn to_isometry(&self) -> Isometry3<f64> {
        Isometry3::from_parts(Translation3::from(self.position), self.orientation)
    }

    pub fn position(&self) -> &Vector3<f64> {
        &self.position
    }

    pub fn orientation(&self) -> &UnitQuaternion<f64> {
        &self.orientation
    }

    pub fn is_finite(&self) -> bool {
        self.position.iter().all(|v| v.is_finite())
            && self.orientation.coords.iter().all(|v| v.is_finite())
    }

    /// `self ∘ other`: `other` expressed in the frame of `self`.
    pub fn compose(&self, other: &Pose3) -> Pose3 {
        Pose3::new(
            self.position + self.orientation * other.position,
            self.orientation * other.orientation,
        )
    }

    pub fn inverse(&self) -> Pose3 {
        let inv = self.orientation.inverse();
        Pose3::new(-(inv * self.position), inv)
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.position + self.orientation * p
    }

    /// Linear interpolation of position and shortest-arc slerp of orientation.
    pub fn interpolate(&self, other: &Pose3, s: f64) -> Pose3 {
        let position = self.position.lerp(&other.position, s);
        Pose3::new(position, slerp_shortest(&self.orientation, &other.orientation, s))
    }

    /// Applies a world-frame perturbation: translate by `dp`, then rotate by
    /// the rotation vector `dr` about the pose origin.
    pub fn perturbed(&self, dp: &Vector3<f64>, dr: &Vector3<f64>) -> Pose3 {
        Pose3::new(
            self.position + dp,
            UnitQuaternion::from_scaled_axis(*dr) * self.orientation,
        )
    }
}

fn slerp_shortest(a: &UnitQuaternion<f64>, b: &UnitQuaternion<f64>, s: f64) -> UnitQuaternion<f64> {
    let b = if a.coords.dot(&b.coords) < 0.0 {
        UnitQuaternion::new_unchecked(-b.into_inner())
    } else {
        *b
    };
    a.try_slerp(&b, s, 1e-12).unwrap_or_else(|| {
        // nearly identical rotations
        UnitQuaternion::new_normalize(a.into_inner().lerp(&b.into_inner(), s))
    })
}

/// Planar base pose in the world frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 3]", into = "[f64; 3]")]
pub struct BasePose {
    pub x: f64,
    pub y: f64,
    yaw: f64,
}

impl From<[f64; 3]> for BasePose {
    fn from(v: [f64; 3]) -> Self {
        BasePose::new(v[0], v[1], v[2])
    }
}

impl From<BasePose> for [f64; 3] {
    fn from(b: BasePose) -> Self {
        [b.x, b.y, b.yaw]
    }
}

impl Default for BasePose {
    fn default() -> Self {
        BasePose::new(0.0, 0.0, 0.0)
    }
}

impl BasePose {
    pub fn new(x: f64, y: f64, yaw: f64) -> Self {
        BasePose {
            x,
            y,
            yaw: wrap_angle(yaw),
        }
    }

    pub fn yaw(&self) -> f64 {
        self.yaw
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.yaw.is_finite()
    }

    /// The base frame as a 3-D pose: no z translation, rotation about z only.
    pub fn lift(&self) -> Pose3 {
        Pose3::new(
            Vector3::new(self.x, self.y, 0.0),
            UnitQuaternion::from_axis_angle(&Vector3::z_axis(), self.yaw),
        )
    }

    pub fn to_isometry(&self) -> Isometry3<f64> {
        Isometry3::from_parts(
            Translation3::new(self.x, self.y, 0.0),
            UnitQuaternion::from_axis_angle(&Vector3::z_axis(), self.yaw),
        )
    }

    /// SE(2) composition `self ∘ other`.
    pub fn compose(&self, other: &BasePose) -> BasePose {
        let (s, c) = self.yaw.sin_cos();
        BasePose::new(
            self.x + c * other.x - s * other.y,
            self.y + s * other.x + c * other.y,
            self.yaw + other.yaw,
        )
    }

    /// `(dx, dy, wrapped dyaw)` from `self` to `other`.
    pub fn difference(&self, other: &BasePose) -> [f64; 3] {
        [
            other.x - self.x,
            other.y - self.y,
            wrap_angle(other.yaw - self.yaw),
        ]
    }

    pub fn lerp(&self, other: &BasePose, s: f64) -> BasePose {
        let [dx, dy, dyaw] = self.difference(other);
        BasePose::new(self.x + s * dx, self.y + s * dy, self.yaw + s * dyaw)
    }
}

fn check_finite(base: &BasePose, pose: &Pose3) -> Result<()> {
    if !base.is_finite() || !pose.is_finite() {
        return Err(Error::invalid("non-finite base or end-effector pose"));
    }
    Ok(())
}

/// World-frame pose of something expressed in the base frame.
pub fn gamma_to_world(base: &BasePose, ee_in_base: &Pose3) -> Result<Pose3> {
    check_finite(base, ee_in_base)?;
    Ok(base.lift().compose(ee_in_base))
}

/// Inverse of [`gamma_to_world`].
pub fn gamma_to_base(base: &BasePose, ee_in_world: &Pose3) -> Result<Pose3> {
    check_finite(base, ee_in_world)?;
    Ok(base.lift().inverse().compose(ee_in_world))
}

/// Euclidean translation distance and geodesic rotation angle in `[0, pi]`.
pub fn pose_delta(a: &Pose3, b: &Pose3) -> (f64, f64) {
    let translation = (b.position - a.position).norm();
    let dot = a.orientation.coords.dot(&b.orientation.coords).abs().min(1.0);
    let rotation = if dot >= 1.0 {
        0.0
    } else {
        // atan2 form stays accurate for small angles where acos does not.
        let rel = a.orientation.inverse() * b.orientation;
        2.0 * rel.imag().norm().atan2(rel.w.abs())
    };
    (translation, rotation)
}

/// Rotation about a unit axis; used by the kinematic chain.
pub(crate) fn axis_rotation(axis: &Unit<Vector3<f64>>, angle: f64) -> UnitQuaternion<f64> {
    UnitQuaternion::from_axis_angle(axis, angle)
}
