use std::io::Write;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::primitives::{analytic_distance, Scene, EMPTY_DISTANCE};
use crate::error::{Error, Result};

pub const DEFAULT_RESOLUTION: f64 = 0.02;
/// Workspace padding on every side; twice the default safety margin.
pub const DEFAULT_PADDING: f64 = 0.2;
pub const DEFAULT_NODE_BUDGET: usize = 40_000_000;

/// Dense node-centred signed-distance grid with trilinear lookup.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceField {
    origin: Vector3<f64>,
    resolution: f64,
    dims: [usize; 3],
    values: Vec<f64>,
}

pub fn build_field(scene: &Scene, resolution: f64) -> Result<DistanceField> {
    build_field_with(scene, resolution, DEFAULT_PADDING, DEFAULT_NODE_BUDGET)
}

pub fn build_field_with(
    scene: &Scene,
    resolution: f64,
    padding: f64,
    node_budget: usize,
) -> Result<DistanceField> {
    if !(resolution > 0.0) || !resolution.is_finite() {
        return Err(Error::invalid(format!("field resolution must be positive, got {resolution}")));
    }
    if !(padding >= 0.0) {
        return Err(Error::invalid("field padding must be non-negative"));
    }
    scene.validate()?;
    let origin = Vector3::from(scene.workspace.min).add_scalar(-padding);
    let span = scene.workspace.extent().add_scalar(2.0 * padding);
    let mut dims = [0usize; 3];
    let mut requested: usize = 1;
    for i in 0..3 {
        let cells = (span[i] / resolution - 1e-9).ceil().max(1.0);
        if cells > 1e9 {
            return Err(Error::Capacity { requested: usize::MAX, budget: node_budget });
        }
        dims[i] = cells as usize + 1;
        requested = requested.saturating_mul(dims[i]);
    }
    if requested > node_budget {
        return Err(Error::Capacity { requested, budget: node_budget });
    }

    let mut values = Vec::with_capacity(requested);
    for i in 0..dims[0] {
        for j in 0..dims[1] {
            for k in 0..dims[2] {
                let p = origin + Vector3::new(i as f64, j as f64, k as f64) * resolution;
                values.push(analytic_distance(scene, &p).clamp(-EMPTY_DISTANCE, EMPTY_DISTANCE));
            }
        }
    }
    Ok(DistanceField { origin, resolution, dims, values })
}

impl DistanceField {
    pub fn origin(&self) -> &Vector3<f64> {
        &self.origin
    }

    pub fn resolution(&self) -> f64 {
        self.resolution
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.dims[1] + j) * self.dims[2] + k
    }

    pub fn node_position(&self, i: usize, j: usize, k: usize) -> Vector3<f64> {
        self.origin + Vector3::new(i as f64, j as f64, k as f64) * self.resolution
    }

    pub fn node_value(&self, i: usize, j: usize, k: usize) -> f64 {
        self.values[self.index(i, j, k)]
    }

    /// Trilinear interpolation; points outside the grid are clamped onto its
    /// boundary first.
    pub fn query(&self, p: &Vector3<f64>) -> f64 {
        let mut base = [0usize; 3];
        let mut t = [0.0; 3];
        for a in 0..3 {
            let last = (self.dims[a] - 1) as f64;
            let mut g = ((p[a] - self.origin[a]) / self.resolution).clamp(0.0, last);
            let r = g.round();
            if (g - r).abs() < 1e-9 {
                g = r;
            }
            let i0 = (g.floor() as usize).min(self.dims[a] - 2);
            base[a] = i0;
            t[a] = g - i0 as f64;
        }
        let [i, j, k] = base;
        let [tx, ty, tz] = t;
        let v = |di, dj, dk| self.values[self.index(i + di, j + dj, k + dk)];
        let lerp = |a: f64, b: f64, s: f64| if s == 0.0 { a } else if s == 1.0 { b } else { a + (b - a) * s };
        let c00 = lerp(v(0, 0, 0), v(1, 0, 0), tx);
        let c10 = lerp(v(0, 1, 0), v(1, 1, 0), tx);
        let c01 = lerp(v(0, 0, 1), v(1, 0, 1), tx);
        let c11 = lerp(v(0, 1, 1), v(1, 1, 1), tx);
        let c0 = lerp(c00, c10, ty);
        let c1 = lerp(c01, c11, ty);
        lerp(c0, c1, tz)
    }

    /// Writes the horizontal slice nearest to height `z` as `x,y,distance`
    /// rows.
    pub fn write_slice_csv<W: Write>(&self, z: f64, out: W) -> Result<()> {
        let k = (((z - self.origin.z) / self.resolution).round().max(0.0) as usize).min(self.dims[2] - 1);
        let mut w = csv::Writer::from_writer(out);
        let to_io = |e: csv::Error| Error::io("<field slice>", e.into());
        w.write_record(["x", "y", "distance"]).map_err(to_io)?;
        for i in 0..self.dims[0] {
            for j in 0..self.dims[1] {
                let p = self.node_position(i, j, k);
                w.write_record([p.x.to_string(), p.y.to_string(), self.node_value(i, j, k).to_string()])
                    .map_err(to_io)?;
            }
        }
        w.flush().map_err(|e| Error::io("<field slice>", e))?;
        Ok(())
    }
}
