use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Distance reported when nothing is in the scene.
pub const EMPTY_DISTANCE: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Aabb {
    pub fn new(min: [f64; 3], max: [f64; 3]) -> Result<Self> {
        let b = Aabb { min, max };
        b.validate()?;
        Ok(b)
    }

    fn validate(&self) -> Result<()> {
        if (0..3).any(|i| !(self.min[i] < self.max[i]) || !self.min[i].is_finite() || !self.max[i].is_finite()) {
            return Err(Error::invalid(format!("degenerate box {:?}..{:?}", self.min, self.max)));
        }
        Ok(())
    }

    pub fn extent(&self) -> Vector3<f64> {
        Vector3::from(self.max) - Vector3::from(self.min)
    }

    pub fn surface_area(&self) -> f64 {
        let e = self.extent();
        2.0 * (e.x * e.y + e.y * e.z + e.x * e.z)
    }

    pub fn contains_box(&self, other: &Aabb) -> bool {
        (0..3).all(|i| other.min[i] >= self.min[i] && other.max[i] <= self.max[i])
    }

    pub fn signed_distance(&self, p: &Vector3<f64>) -> f64 {
        let c = (Vector3::from(self.min) + Vector3::from(self.max)) * 0.5;
        let h = self.extent() * 0.5;
        let q = (p - c).abs() - h;
        let outside = q.map(|v| v.max(0.0)).norm();
        let inside = q.x.max(q.y).max(q.z).min(0.0);
        outside + inside
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Shape {
    Sphere { center: [f64; 3], radius: f64 },
    AxisBox { min: [f64; 3], max: [f64; 3] },
    /// Upright cylinder standing on `base_center`.
    Cylinder { base_center: [f64; 3], radius: f64, height: f64 },
}

impl Shape {
    pub fn signed_distance(&self, p: &Vector3<f64>) -> f64 {
        match *self {
            Shape::Sphere { center, radius } => (p - Vector3::from(center)).norm() - radius,
            Shape::AxisBox { min, max } => Aabb { min, max }.signed_distance(p),
            Shape::Cylinder { base_center, radius, height } => {
                let rel = p - Vector3::from(base_center);
                let radial = (rel.x * rel.x + rel.y * rel.y).sqrt() - radius;
                let axial = (rel.z - height * 0.5).abs() - height * 0.5;
                let outside = (radial.max(0.0).powi(2) + axial.max(0.0).powi(2)).sqrt();
                outside + radial.max(axial).min(0.0)
            }
        }
    }

    pub fn bounds(&self) -> Aabb {
        match *self {
            Shape::Sphere { center, radius } => Aabb {
                min: center.map(|c| c - radius),
                max: center.map(|c| c + radius),
            },
            Shape::AxisBox { min, max } => Aabb { min, max },
            Shape::Cylinder { base_center: c, radius, height } => Aabb {
                min: [c[0] - radius, c[1] - radius, c[2]],
                max: [c[0] + radius, c[1] + radius, c[2] + height],
            },
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            Shape::Sphere { center, radius } => radius > 0.0 && center.iter().all(|v| v.is_finite()),
            Shape::AxisBox { min, max } => Aabb { min, max }.validate().is_ok(),
            Shape::Cylinder { base_center, radius, height } => {
                radius > 0.0 && height > 0.0 && base_center.iter().all(|v| v.is_finite())
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("invalid primitive {self:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Obstacle {
    pub shape: Shape,
    /// The manipulated object; excluded from the distance field.
    #[serde(default)]
    pub is_target: bool,
}

impl Obstacle {
    pub fn new(shape: Shape) -> Self {
        Obstacle { shape, is_target: false }
    }

    pub fn target(shape: Shape) -> Self {
        Obstacle { shape, is_target: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub workspace: Aabb,
    #[serde(default)]
    pub obstacles: Vec<Obstacle>,
}

impl Scene {
    pub fn new(workspace: Aabb, obstacles: Vec<Obstacle>) -> Result<Self> {
        let scene = Scene { workspace, obstacles };
        scene.validate()?;
        Ok(scene)
    }

    pub fn empty(workspace: Aabb) -> Self {
        Scene { workspace, obstacles: Vec::new() }
    }

    pub fn validate(&self) -> Result<()> {
        self.workspace.validate()?;
        for (i, o) in self.obstacles.iter().enumerate() {
            o.shape.validate()?;
            if !self.workspace.contains_box(&o.shape.bounds()) {
                return Err(Error::invalid(format!("obstacle {i} leaves the workspace")));
            }
        }
        Ok(())
    }
}

/// Exact signed distance to the nearest non-target obstacle.
pub fn analytic_distance(scene: &Scene, p: &Vector3<f64>) -> f64 {
    scene
        .obstacles
        .iter()
        .filter(|o| !o.is_target)
        .map(|o| o.shape.signed_distance(p))
        .fold(EMPTY_DISTANCE, f64::min)
}
