//! Scene primitives, the voxel distance field, and robot-surface probes.

pub mod grid;
pub mod primitives;
pub mod query_points;

pub use grid::{build_field, build_field_with, DistanceField, DEFAULT_RESOLUTION};
pub use primitives::{analytic_distance, Aabb, Obstacle, Scene, Shape, EMPTY_DISTANCE};
pub use query_points::{
    materialize_into, materialize_points, sample_query_points, PointScratch, QueryPointSet,
    DEFAULT_QUERY_POINTS,
};
