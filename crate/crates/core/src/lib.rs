//! Whole-body trajectory optimization for a mobile manipulator: the base and
//! the arm are planned together between consecutive end-effector waypoints by
//! minimizing a reachability, smoothness and collision objective.

pub mod anneal;
pub mod bench;
pub mod costs;
pub mod error;
pub mod field;
pub mod geometry;
pub mod kinematics;
pub mod planner;

pub use error::{Error, Result};
