//! Points sampled on the robot's bounding surfaces, used to probe the
//! distance field at each trajectory state.

use std::f64::consts::PI;

use nalgebra::{Isometry3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::primitives::Aabb;
use crate::costs::WholeBodyState;
use crate::error::{Error, Result};
use crate::kinematics::KinematicChain;

pub const DEFAULT_QUERY_POINTS: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkPoint {
    pub link_index: usize,
    /// In the link's frame (after its joint rotation).
    pub offset: Vector3<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct QueryPointSet {
    pub link_points: Vec<LinkPoint>,
    pub base_points: Vec<Vector3<f64>>,
}

impl QueryPointSet {
    pub fn len(&self) -> usize {
        self.link_points.len() + self.base_points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Surface area of each body, base first, then one capsule per link.
pub fn body_areas(chain: &KinematicChain, base_geometry: &Aabb) -> Vec<f64> {
    std::iter::once(base_geometry.surface_area())
        .chain(chain.links().iter().map(|l| {
            let len = l.offset.position().norm();
            2.0 * PI * l.radius * len + 4.0 * PI * l.radius * l.radius
        }))
        .collect()
}

/// Largest-remainder apportionment of `n` points; ties go to the lower index.
pub fn allocate(areas: &[f64], n: usize) -> Vec<usize> {
    let total: f64 = areas.iter().sum();
    let quotas: Vec<f64> = areas.iter().map(|a| a / total * n as f64).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..areas.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = quotas[a] - quotas[a].floor();
        let fb = quotas[b] - quotas[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &i in order.iter().take(n.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    counts
}

fn sample_box_surface(b: &Aabb, rng: &mut ChaCha8Rng) -> Vector3<f64> {
    let e = b.extent();
    // faces normal to x, y, z (two of each)
    let face_areas = [e.y * e.z, e.x * e.z, e.x * e.y];
    let total = 2.0 * face_areas.iter().sum::<f64>();
    let mut pick = rng.random::<f64>() * total;
    let mut axis = 2;
    for (a, area) in face_areas.iter().enumerate() {
        if pick < 2.0 * area {
            axis = a;
            break;
        }
        pick -= 2.0 * area;
    }
    let mut p = Vector3::from_fn(|i, _| b.min[i] + rng.random::<f64>() * e[i]);
    p[axis] = if rng.random::<bool>() { b.max[axis] } else { b.min[axis] };
    p
}

fn unit_vector(rng: &mut ChaCha8Rng) -> Vector3<f64> {
    loop {
        let v = Vector3::from_fn(|_, _| StandardNormal.sample(rng));
        let n: f64 = v.norm();
        if n > 1e-12 {
            return v / n;
        }
    }
}

fn sample_capsule_surface(end: &Vector3<f64>, radius: f64, rng: &mut ChaCha8Rng) -> Vector3<f64> {
    let len = end.norm();
    let side = 2.0 * PI * radius * len;
    let caps = 4.0 * PI * radius * radius;
    if len > 1e-12 && rng.random::<f64>() * (side + caps) < side {
        let axis = end / len;
        let helper = if axis.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
        let u = axis.cross(&helper).normalize();
        let v = axis.cross(&u);
        let theta = rng.random::<f64>() * 2.0 * PI;
        let s = rng.random::<f64>() * len;
        axis * s + (u * theta.cos() + v * theta.sin()) * radius
    } else {
        let d = unit_vector(rng);
        if d.dot(end) >= 0.0 && len > 1e-12 {
            end + d * radius
        } else {
            d * radius
        }
    }
}

/// Samples `n_q` points uniformly over the base box and the link capsules,
/// apportioned by surface area.
pub fn sample_query_points(
    chain: &KinematicChain,
    base_geometry: &Aabb,
    n_q: usize,
    seed: u64,
) -> Result<QueryPointSet> {
    if n_q == 0 {
        return Err(Error::invalid("need at least one query point"));
    }
    let counts = allocate(&body_areas(chain, base_geometry), n_q);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut set = QueryPointSet::default();
    for _ in 0..counts[0] {
        set.base_points.push(sample_box_surface(base_geometry, &mut rng));
    }
    for (link_index, (link, &count)) in chain.links().iter().zip(&counts[1..]).enumerate() {
        let end = *link.offset.position();
        for _ in 0..count {
            set.link_points.push(LinkPoint {
                link_index,
                offset: sample_capsule_surface(&end, link.radius, &mut rng),
            });
        }
    }
    Ok(set)
}

/// Reusable buffers for [`materialize_into`].
#[derive(Default)]
pub struct PointScratch {
    pub frames: Vec<Isometry3<f64>>,
    pub points: Vec<Vector3<f64>>,
}

/// World-frame positions of every query point at `state`, base points first.
pub fn materialize_points(
    qps: &QueryPointSet,
    state: &WholeBodyState,
    chain: &KinematicChain,
) -> Vec<Vector3<f64>> {
    let mut scratch = PointScratch::default();
    materialize_into(qps, state, chain, &mut scratch);
    scratch.points
}

pub fn materialize_into(
    qps: &QueryPointSet,
    state: &WholeBodyState,
    chain: &KinematicChain,
    scratch: &mut PointScratch,
) {
    let base = state.base.to_isometry();
    chain.link_frames(state.joints.as_slice(), &mut scratch.frames);
    scratch.points.clear();
    scratch
        .points
        .extend(qps.base_points.iter().map(|p| base.transform_point(&(*p).into()).coords));
    for lp in &qps.link_points {
        let world = base * scratch.frames[lp.link_index];
        scratch.points.push(world.transform_point(&lp.offset.into()).coords);
    }
}
