//! Meshfree implicit solver for continuum-kinematics-inspired peridynamics.

pub mod assembly;
pub mod constitutive;
pub mod error;
pub mod geometry;
pub mod harness;
pub mod solver;
pub mod verify;

pub use error::{CpdError, Result};
