//! Hierarchical cloth simulation.
//!
//! The coarsest mesh level is advanced by an implicit solver (projective
//! dynamics ADMM, or a conjugate-gradient implicit-Euler baseline); each
//! finer level is synthesized per triangle by a small fully connected
//! network trained on full-resolution simulations.

pub mod harness;
pub mod hierarchy;
pub mod neural;
pub mod solver;
pub mod trainer;

pub type Vec3 = nalgebra::Vector3<f64>;
