//! Desk-scale scenario families. Each scenario is built around a feasible
//! trajectory computed first; obstacles are placed afterwards so that they
//! keep clear of that trajectory's query points.

use std::f64::consts::PI;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::scenario::{default_base_geometry, Family, Scenario, SCHEMA_VERSION};
use crate::costs::{CostWeights, Trajectory, WholeBodyState};
use crate::error::{Error, Result};
use crate::field::{
    analytic_distance, materialize_points, sample_query_points, Aabb, Obstacle, QueryPointSet, Scene, Shape,
    DEFAULT_QUERY_POINTS, DEFAULT_RESOLUTION,
};
use crate::geometry::{gamma_to_base, gamma_to_world, BasePose, Pose3};
use crate::kinematics::{forward_kinematics, solve_ik, JointVector, KinematicChain};
use crate::planner::{derive_seed, step_count, WaypointPair};

const MAX_ATTEMPTS: usize = 200;
const WRIST_MIN: f64 = 0.4;
const STEP: f64 = 0.05;
/// Extra clearance beyond the safety threshold and the field's error bound.
const MARGIN: f64 = 0.02;

fn family_tag(f: Family) -> u64 {
    match f {
        Family::FreeSpace => 1,
        Family::OutOfReach => 2,
        Family::Corridor => 3,
        Family::PickPlace => 4,
    }
}

pub fn scenario_seed(family: Family, index: usize, seed: u64) -> u64 {
    derive_seed(derive_seed(seed, family_tag(family)), index as u64)
}

pub fn generate_scenarios(family: Family, count: usize, seed: u64) -> Result<Vec<Scenario>> {
    if count == 0 {
        return Err(Error::invalid("scenario count must be at least 1"));
    }
    (0..count).map(|i| generate_scenario(family, i, seed)).collect()
}

/// Deterministic in `(family, index, seed)`.
pub fn generate_scenario(family: Family, index: usize, seed: u64) -> Result<Scenario> {
    let rng_seed = scenario_seed(family, index, seed);
    let chain = KinematicChain::reference_arm();
    let base_geometry = default_base_geometry();
    let qps = sample_query_points(&chain, &base_geometry, DEFAULT_QUERY_POINTS, rng_seed)?;
    let builder = Builder { chain, base_geometry, qps, weights: CostWeights::default() };
    for attempt in 0..MAX_ATTEMPTS {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(rng_seed, attempt as u64));
        let draft = match family {
            Family::FreeSpace => builder.free_space(&mut rng),
            Family::OutOfReach => builder.out_of_reach(&mut rng),
            Family::Corridor => builder.corridor(&mut rng),
            Family::PickPlace => builder.pick_place(&mut rng),
        };
        if let Some(d) = draft {
            return builder.finish(d, family, index, rng_seed);
        }
    }
    Err(Error::Generation {
        family: family.to_string(),
        index,
        attempts: MAX_ATTEMPTS,
    })
}

struct Draft {
    start: WholeBodyState,
    segments: Vec<Trajectory>,
    waypoints: Vec<WaypointPair>,
    obstacles: Vec<Obstacle>,
}

struct Builder {
    chain: KinematicChain,
    base_geometry: Aabb,
    qps: QueryPointSet,
    weights: CostWeights,
}

impl Builder {
    fn clearance_needed(&self) -> f64 {
        self.weights.epsilon0 + DEFAULT_RESOLUTION * 3f64.sqrt() / 2.0 + MARGIN
    }

    /// A comfortable arm configuration whose end-effector lands in the box
    /// `lo..hi` of the base frame.
    fn sample_arm(&self, rng: &mut ChaCha8Rng, lo: [f64; 3], hi: [f64; 3]) -> Option<JointVector> {
        const RANGES: [(f64, f64); 6] = [(-0.8, 0.8), (-1.0, 0.8), (0.7, 2.0), (-1.0, 1.0), (-1.3, 1.3), (-1.0, 1.0)];
        for _ in 0..500 {
            let q = JointVector(RANGES.iter().map(|&(a, b)| rng.random_range(a..b)).collect());
            // keep the wrist pitch away from its singular zero
            if q.0[4].abs() < WRIST_MIN {
                continue;
            }
            let p = *forward_kinematics(&self.chain, &q).ok()?.position();
            if (0..3).all(|i| p[i] >= lo[i] && p[i] <= hi[i]) {
                return Some(q);
            }
        }
        None
    }

    /// Interpolates base and end-effector between two states and solves IK
    /// along the way; `None` if any sample fails.
    fn segment(
        &self,
        from: &WholeBodyState,
        base_to: BasePose,
        ee_to: &Pose3,
        gripper_to: f64,
    ) -> Option<(Trajectory, WaypointPair)> {
        let ee_from = from.ee_world(&self.chain).ok()?;
        let steps = step_count(&ee_from, ee_to, STEP);
        let mut states = vec![from.clone()];
        for t in 1..=steps {
            let s = t as f64 / steps as f64;
            let base = from.base.lerp(&base_to, s);
            let ee = if t == steps { *ee_to } else { ee_from.interpolate(ee_to, s) };
            let local = gamma_to_base(&base, &ee).ok()?;
            let prev = &states[t - 1].joints;
            let ik = solve_ik(&self.chain, &local, prev, self.weights.n_max).ok()?;
            if !ik.converged() {
                return None;
            }
            let gripper = if t == steps { gripper_to } else { from.gripper };
            states.push(WholeBodyState::new(base, ik.joints, gripper));
        }
        let wp = WaypointPair {
            q_current: gamma_to_base(&from.base, &ee_from).ok()?,
            base_at_prediction: from.base,
            q_next: gamma_to_base(&from.base, ee_to).ok()?,
            gripper_next: gripper_to,
        };
        Some((Trajectory::new(states).ok()?, wp))
    }

    fn points(&self, segments: &[Trajectory]) -> Vec<Vector3<f64>> {
        segments
            .iter()
            .flat_map(|t| t.states())
            .flat_map(|s| materialize_points(&self.qps, s, &self.chain))
            .collect()
    }

    fn clear(&self, points: &[Vector3<f64>], obstacles: &[Obstacle]) -> bool {
        let probe = Scene { workspace: Aabb { min: [-1e3; 3], max: [1e3; 3] }, obstacles: obstacles.to_vec() };
        let need = self.clearance_needed();
        points.iter().all(|p| analytic_distance(&probe, p) >= need)
    }

    fn random_start(&self, rng: &mut ChaCha8Rng, yaw: f64) -> Option<WholeBodyState> {
        let q = self.sample_arm(rng, [0.4, -0.25, 0.3], [0.75, 0.25, 0.8])?;
        let base = BasePose::new(rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3), yaw);
        Some(WholeBodyState::new(base, q, 1.0))
    }

    fn free_space(&self, rng: &mut ChaCha8Rng) -> Option<Draft> {
        let yaw = rng.random_range(-PI..PI);
        let start = self.random_start(rng, yaw)?;
        let local = forward_kinematics(&self.chain, &start.joints).ok()?;
        let dir = Vector3::from_fn(|_, _| rng.random_range(-1.0..1.0f64));
        if dir.norm() < 1e-3 {
            return None;
        }
        let dp = dir.normalize() * rng.random_range(0.1..0.3);
        let dr = Vector3::from_fn(|_, _| rng.random_range(-0.15..0.15));
        let target_local = local.perturbed(&dp, &dr);
        let p = target_local.position();
        if !(0.35..=0.8).contains(&p.x) || p.y.abs() > 0.3 || !(0.25..=0.85).contains(&p.z) {
            return None;
        }
        let target = gamma_to_world(&start.base, &target_local).ok()?;
        let (seg, wp) = self.segment(&start, start.base, &target, 1.0)?;
        Some(Draft { start, segments: vec![seg], waypoints: vec![wp], obstacles: vec![] })
    }

    /// Drives the base `distance` along `heading` (world yaw) while the arm
    /// holds its pose relative to the base.
    fn drive(
        &self,
        from: &WholeBodyState,
        heading: f64,
        distance: f64,
        gripper_to: f64,
    ) -> Option<(Trajectory, WaypointPair, BasePose)> {
        let b = from.base;
        let to = BasePose::new(b.x + distance * heading.cos(), b.y + distance * heading.sin(), b.yaw());
        let local = forward_kinematics(&self.chain, &from.joints).ok()?;
        let target = gamma_to_world(&to, &local).ok()?;
        let (seg, wp) = self.segment(from, to, &target, gripper_to)?;
        Some((seg, wp, to))
    }

    fn beyond_reach(&self, wp: &WaypointPair) -> bool {
        let root = self.chain.base_mount().position();
        (wp.q_next.position() - root).norm() > self.chain.total_reach() + 0.05
    }

    fn out_of_reach(&self, rng: &mut ChaCha8Rng) -> Option<Draft> {
        let yaw = rng.random_range(-PI..PI);
        let start = self.random_start(rng, yaw)?;
        let heading = start.base.yaw() + rng.random_range(-PI / 3.0..PI / 3.0);
        let (seg, wp, _) = self.drive(&start, heading, rng.random_range(1.2..1.6), 1.0)?;
        if !self.beyond_reach(&wp) {
            return None;
        }
        Some(Draft { start, segments: vec![seg], waypoints: vec![wp], obstacles: vec![] })
    }

    /// A wall across the driving direction with a gap the certificate passes
    /// through.
    fn corridor(&self, rng: &mut ChaCha8Rng) -> Option<Draft> {
        let yaw = rng.random_range(-0.05..0.05);
        let start = self.random_start(rng, yaw)?;
        let distance = rng.random_range(1.2..1.6);
        let (seg, wp, end) = self.drive(&start, 0.0, distance, 1.0)?;
        if !self.beyond_reach(&wp) {
            return None;
        }
        let points = self.points(std::slice::from_ref(&seg));
        let lo_y = points.iter().map(|p| p.y).fold(f64::INFINITY, f64::min);
        let hi_y = points.iter().map(|p| p.y).fold(f64::NEG_INFINITY, f64::max);
        let top = points.iter().map(|p| p.z).fold(f64::NEG_INFINITY, f64::max) + 0.3;
        let gap = self.clearance_needed() + rng.random_range(0.01..0.08);
        let x_mid = 0.5 * (start.base.x + end.x) + rng.random_range(-0.15..0.15);
        let (x0, x1) = (x_mid - 0.05, x_mid + 0.05);
        let obstacles = vec![
            Obstacle::new(Shape::AxisBox { min: [x0, hi_y + gap, 0.0], max: [x1, hi_y + gap + 0.8, top] }),
            Obstacle::new(Shape::AxisBox { min: [x0, lo_y - gap - 0.8, 0.0], max: [x1, lo_y - gap, top] }),
        ];
        if !self.clear(&points, &obstacles) {
            return None;
        }
        Some(Draft { start, segments: vec![seg], waypoints: vec![wp], obstacles })
    }

    /// Pre-grasp above an object on one table, grasp, then carry it 2 m
    /// sideways to a second table.
    fn pick_place(&self, rng: &mut ChaCha8Rng) -> Option<Draft> {
        let yaw = rng.random_range(-PI..PI);
        let base = BasePose::new(rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3), yaw);
        let q_grasp = self.sample_arm(rng, [0.5, -0.15, 0.35], [0.72, 0.15, 0.6])?;
        let grasp = gamma_to_world(&base, &forward_kinematics(&self.chain, &q_grasp).ok()?).ok()?;
        let pre = grasp.perturbed(&Vector3::new(0.0, 0.0, 0.1), &Vector3::zeros());

        let q_start = JointVector(
            q_grasp
                .0
                .iter()
                .zip(self.chain.links())
                .map(|(q, l)| l.limits.clamp(q + rng.random_range(-0.25..0.25)))
                .collect(),
        );
        let start = WholeBodyState::new(base, q_start, 1.0);
        let s = start.ee_world(&self.chain).ok()?;
        let gap = (s.position() - grasp.position()).norm();
        if !(0.1..=0.35).contains(&gap) || s.position().z < grasp.position().z + 0.05 {
            return None;
        }

        let (seg1, wp1) = self.segment(&start, base, &pre, 1.0)?;
        let (seg2, wp2) = self.segment(seg1.last(), base, &grasp, 0.0)?;
        let side = if rng.random::<bool>() { PI / 2.0 } else { -PI / 2.0 };
        let (seg3, wp3, _) = self.drive(seg2.last(), yaw + side, 2.0, 1.0)?;
        let place = seg3.last().ee_world(&self.chain).ok()?;

        let top = grasp.position().z - 0.25;
        if top < 0.08 {
            return None;
        }
        let table = |c: &Vector3<f64>| {
            Obstacle::new(Shape::AxisBox { min: [c.x - 0.15, c.y - 0.15, 0.0], max: [c.x + 0.15, c.y + 0.15, top] })
        };
        let object = Obstacle::target(Shape::Cylinder {
            base_center: [grasp.position().x, grasp.position().y, top],
            radius: 0.03,
            height: 0.1,
        });
        let obstacles = vec![table(grasp.position()), table(place.position()), object];
        let segments = vec![seg1, seg2, seg3];
        if !self.clear(&self.points(&segments), &obstacles) {
            return None;
        }
        Some(Draft { start, segments, waypoints: vec![wp1, wp2, wp3], obstacles })
    }

    fn finish(&self, d: Draft, family: Family, index: usize, rng_seed: u64) -> Result<Scenario> {
        let points = self.points(&d.segments);
        let mut min = [f64::INFINITY; 3];
        let mut max = [f64::NEG_INFINITY; 3];
        let bounds = d.obstacles.iter().map(|o| o.shape.bounds());
        for b in points.iter().map(|p| Aabb { min: [p.x, p.y, p.z], max: [p.x, p.y, p.z] }).chain(bounds) {
            for i in 0..3 {
                min[i] = min[i].min(b.min[i]);
                max[i] = max[i].max(b.max[i]);
            }
        }
        let workspace = Aabb::new(
            [min[0] - 0.6, min[1] - 0.6, min[2].min(0.0) - 0.1],
            [max[0] + 0.6, max[1] + 0.6, max[2] + 0.4],
        )?;
        let scenario = Scenario {
            schema_version: SCHEMA_VERSION,
            name: format!("{family}-{index:03}"),
            family: Some(family),
            rng_seed,
            field_resolution: DEFAULT_RESOLUTION,
            n_query_points: DEFAULT_QUERY_POINTS,
            start_state: d.start,
            weights: self.weights,
            base_geometry: self.base_geometry,
            scene: Scene::new(workspace, d.obstacles)?,
            chain: self.chain.clone(),
            waypoints: d.waypoints,
            certificate: Some(d.segments),
        };
        scenario.validate_structure()?;
        Ok(scenario)
    }
}
