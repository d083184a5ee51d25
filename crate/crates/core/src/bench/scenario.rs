use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::costs::{min_clearance, total_objective, CostContext, CostWeights, Trajectory, WholeBodyState};
use crate::error::{Error, Result};
use crate::field::{
    build_field, sample_query_points, Aabb, DistanceField, QueryPointSet, Scene, DEFAULT_QUERY_POINTS,
    DEFAULT_RESOLUTION,
};
use crate::kinematics::KinematicChain;
use crate::planner::{lift_waypoint, WaypointPair};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    FreeSpace,
    OutOfReach,
    Corridor,
    PickPlace,
}

impl Family {
    pub const ALL: [Family; 4] = [Family::FreeSpace, Family::OutOfReach, Family::Corridor, Family::PickPlace];

    pub fn as_str(&self) -> &'static str {
        match self {
            Family::FreeSpace => "free_space",
            Family::OutOfReach => "out_of_reach",
            Family::Corridor => "corridor",
            Family::PickPlace => "pick_place",
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Family::ALL
            .into_iter()
            .find(|f| f.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown scenario family {s:?}")))
    }
}

fn default_resolution() -> f64 {
    DEFAULT_RESOLUTION
}

fn default_query_points() -> usize {
    DEFAULT_QUERY_POINTS
}

/// Default base footprint: 0.5 m x 0.4 m, 0.25 m tall.
pub fn default_base_geometry() -> Aabb {
    Aabb { min: [-0.25, -0.2, 0.0], max: [0.25, 0.2, 0.25] }
}

fn default_base() -> Aabb {
    default_base_geometry()
}

/// One planning problem: a scene, a robot, where it starts, and the scripted
/// waypoints it has to follow.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub schema_version: u32,
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub family: Option<Family>,
    pub rng_seed: u64,
    #[serde(default = "default_resolution")]
    pub field_resolution: f64,
    #[serde(default = "default_query_points")]
    pub n_query_points: usize,
    pub start_state: WholeBodyState,
    #[serde(default)]
    pub weights: CostWeights,
    #[serde(default = "default_base")]
    pub base_geometry: Aabb,
    pub scene: Scene,
    pub chain: KinematicChain,
    pub waypoints: Vec<WaypointPair>,
    /// A known-feasible trajectory per segment.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub certificate: Option<Vec<Trajectory>>,
}

impl Scenario {
    /// Checks everything that does not need the distance field.
    pub fn validate_structure(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Scenario(format!("{}: {m}", self.name)));
        if self.schema_version != SCHEMA_VERSION {
            return fail(format!(
                "schema version {} (expected {SCHEMA_VERSION})",
                self.schema_version
            ));
        }
        if self.waypoints.is_empty() {
            return fail("no waypoints".into());
        }
        if self.n_query_points == 0 || !(self.field_resolution > 0.0) {
            return fail("query point count and field resolution must be positive".into());
        }
        self.scene.validate()?;
        self.weights.validate()?;
        self.start_state.validate(&self.chain)?;
        for (k, wp) in self.waypoints.iter().enumerate() {
            lift_waypoint(wp)?;
            if !(0.0..=1.0).contains(&wp.gripper_next) {
                return fail(format!("waypoint {k} gripper command outside [0, 1]"));
            }
        }
        if let Some(cert) = &self.certificate {
            if cert.len() != self.waypoints.len() {
                return fail(format!(
                    "certificate has {} segments for {} waypoints",
                    cert.len(),
                    self.waypoints.len()
                ));
            }
            for traj in cert {
                for s in traj.states() {
                    s.validate(&self.chain)?;
                }
            }
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str, origin: &Path) -> Result<Self> {
        let scenario: Scenario = toml::from_str(text).map_err(|e| Error::Parse {
            path: origin.to_path_buf(),
            message: e.to_string(),
        })?;
        scenario.validate_structure()?;
        Ok(scenario)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Scenario(format!("{}: {e}", self.name)))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml_string()?).map_err(|e| Error::io(path, e))
    }

    pub fn query_points(&self) -> Result<QueryPointSet> {
        sample_query_points(&self.chain, &self.base_geometry, self.n_query_points, self.rng_seed)
    }
}

/// A scenario with its distance field and query points built.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub scenario: Scenario,
    pub field: DistanceField,
    pub qps: QueryPointSet,
}

impl Prepared {
    pub fn new(scenario: Scenario) -> Result<Self> {
        scenario.validate_structure()?;
        let field = build_field(&scenario.scene, scenario.field_resolution)?;
        let qps = scenario.query_points()?;
        Ok(Prepared { scenario, field, qps })
    }

    pub fn ctx(&self) -> CostContext<'_> {
        self.ctx_with(&self.scenario.weights)
    }

    pub fn ctx_with<'a>(&'a self, weights: &'a CostWeights) -> CostContext<'a> {
        CostContext {
            chain: &self.scenario.chain,
            field: &self.field,
            qps: &self.qps,
            weights,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentCheck {
    pub collision: f64,
    pub all_converged: bool,
    pub min_clearance: f64,
    /// Distance between the certificate's end points and the lifted
    /// waypoints, the larger of the two.
    pub endpoint_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificateCheck {
    pub segments: Vec<SegmentCheck>,
}

impl CertificateCheck {
    /// Endpoint tolerance matches the default planner tolerance.
    pub fn passed(&self) -> bool {
        self.segments
            .iter()
            .all(|s| s.collision == 0.0 && s.all_converged && s.endpoint_error <= 0.01)
    }
}

/// Runs each certificate segment through the cost stack. `None` when the
/// scenario carries no certificate.
pub fn check_certificate(prepared: &Prepared) -> Result<Option<CertificateCheck>> {
    let sc = &prepared.scenario;
    let Some(cert) = &sc.certificate else {
        return Ok(None);
    };
    let ctx = prepared.ctx();
    let mut segments = Vec::with_capacity(cert.len());
    for (traj, wp) in cert.iter().zip(&sc.waypoints) {
        let report = total_objective(traj, &ctx)?;
        let (q_start, q_end) = lift_waypoint(wp)?;
        let first = traj.first().ee_world(&sc.chain)?;
        let last = traj.last().ee_world(&sc.chain)?;
        segments.push(SegmentCheck {
            collision: report.collide,
            all_converged: report.all_converged(),
            min_clearance: min_clearance(traj, &ctx),
            endpoint_error: (first.position() - q_start.position())
                .norm()
                .max((last.position() - q_end.position()).norm()),
        });
    }
    Ok(Some(CertificateCheck { segments }))
}

/// Parses, builds the field, and rejects a scenario whose certificate does
/// not pass the cost stack.
pub fn load_prepared(path: &Path) -> Result<Prepared> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let prepared = Prepared::new(Scenario::from_toml_str(&text, path)?)?;
    if let Some(check) = check_certificate(&prepared)? {
        if !check.passed() {
            return Err(Error::Scenario(format!(
                "{}: certificate fails the cost stack: {:?}",
                path.display(),
                check.segments
            )));
        }
    }
    Ok(prepared)
}

pub fn load_scenario(path: &Path) -> Result<Scenario> {
    Ok(load_prepared(path)?.scenario)
}
