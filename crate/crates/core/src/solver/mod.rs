//! Implicit time integration of the coarsest cloth level.
//!
//! A step is posed as the minimization of
//! `1/(2 dt²) ‖M^½ (x − x̃)‖² + U(x)` where `x̃` is the inertial prediction and
//! `U` sums spring and bending energies. [`step_admm`] solves it with
//! projective-dynamics ADMM on a prefactorized global matrix, [`step_cg`]
//! with a linearized implicit-Euler system and conjugate gradients.

mod admm;
mod cg;
mod collision;
pub mod sparse;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hierarchy::TriMesh;
use crate::Vec3;

pub use admm::{step_admm, AdmmSystem};
pub use cg::{implicit_euler_system, pcg_solve, step_cg, CgReport};
pub use collision::{resolve_collisions, CollisionPrimitive};

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("non-finite position at vertex {vertex} (time {time})")]
    Diverged { vertex: usize, time: f64 },
    #[error("invalid solver input: {0}")]
    Invalid(String),
    #[error("global system is not positive definite at vertex {row} (pivot {pivot})")]
    NotPositiveDefinite { row: usize, pivot: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConstraintKind {
    Spring,
    Bending,
}

/// A distance constraint between two vertices with its ADMM auxiliaries.
///
/// Bending is modeled as a spring across each interior edge, connecting the
/// two vertices opposite that edge.
#[derive(Debug, Clone, PartialEq)]
pub struct Constraint {
    pub kind: ConstraintKind,
    pub a: usize,
    pub b: usize,
    pub rest_length: f64,
    pub stiffness: f64,
    /// Slack variable, projected edge vector.
    pub z: Vec3,
    /// Scaled dual variable.
    pub u: Vec3,
}

impl Constraint {
    pub fn new(kind: ConstraintKind, a: usize, b: usize, rest_length: f64, stiffness: f64) -> Result<Self, SolverError> {
        if !(rest_length > 0.0 && rest_length.is_finite()) {
            return Err(SolverError::Invalid(format!(
                "constraint ({a}, {b}) needs positive rest length, got {rest_length}"
            )));
        }
        if !(stiffness >= 0.0 && stiffness.is_finite()) {
            return Err(SolverError::Invalid(format!(
                "constraint ({a}, {b}) needs non-negative stiffness, got {stiffness}"
            )));
        }
        Ok(Self {
            kind,
            a,
            b,
            rest_length,
            stiffness,
            z: Vec3::zeros(),
            u: Vec3::zeros(),
        })
    }

    /// ADMM weight `w = √k`.
    #[inline]
    pub fn weight(&self) -> f64 {
        self.stiffness.sqrt()
    }

    #[inline]
    pub fn energy(&self, x: &[Vec3]) -> f64 {
        let stretch = (x[self.a] - x[self.b]).norm() - self.rest_length;
        0.5 * self.stiffness * stretch * stretch
    }

    /// Gradient of [`Constraint::energy`] with respect to `x_a` (the `x_b`
    /// gradient is its negation).
    #[inline]
    pub fn gradient_a(&self, x: &[Vec3]) -> Vec3 {
        let d = x[self.a] - x[self.b];
        let len = d.norm();
        if len == 0.0 {
            return Vec3::zeros();
        }
        d * (self.stiffness * (len - self.rest_length) / len)
    }

    /// Resets the slack to the current edge vector and the dual to zero.
    pub fn reset_auxiliaries(&mut self, x: &[Vec3]) {
        self.z = x[self.a] - x[self.b];
        self.u = Vec3::zeros();
    }
}

/// Stretch springs on every edge plus cross-edge bending springs.
pub fn build_constraints(mesh: &TriMesh, spring_stiffness: f64, bending_stiffness: f64) -> Result<Vec<Constraint>, SolverError> {
    let x = &mesh.vertices;
    let mut out = Vec::with_capacity(mesh.edges.len() * 2);
    for &[a, b] in &mesh.edges {
        out.push(Constraint::new(
            ConstraintKind::Spring,
            a,
            b,
            (x[a] - x[b]).norm(),
            spring_stiffness,
        )?);
    }
    for (a, b) in mesh.opposite_vertex_pairs() {
        out.push(Constraint::new(
            ConstraintKind::Bending,
            a,
            b,
            (x[a] - x[b]).norm(),
            bending_stiffness,
        )?);
    }
    Ok(out)
}

/// Positions, velocities and lumped masses of the simulated level.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverState {
    pub positions: Vec<Vec3>,
    pub velocities: Vec<Vec3>,
    pub masses: Vec<f64>,
    /// Inertial prediction `x̃`, written by [`predict`].
    pub predicted: Vec<Vec3>,
    pub pinned: Vec<bool>,
    pub time: f64,
}

impl SolverState {
    /// State at rest with uniform masses summing to `total_mass`.
    pub fn at_rest(mesh: &TriMesh, total_mass: f64) -> Result<Self, SolverError> {
        let n = mesh.vertex_count();
        let mut pinned = vec![false; n];
        for &p in &mesh.pinned {
            pinned[p] = true;
        }
        Self::new(mesh.vertices.clone(), vec![total_mass / n as f64; n], pinned)
    }

    pub fn new(positions: Vec<Vec3>, masses: Vec<f64>, pinned: Vec<bool>) -> Result<Self, SolverError> {
        let n = positions.len();
        if masses.len() != n || pinned.len() != n {
            return Err(SolverError::Invalid(format!(
                "array lengths differ: {n} positions, {} masses, {} pin flags",
                masses.len(),
                pinned.len()
            )));
        }
        if let Some(i) = masses.iter().position(|m| !(*m > 0.0 && m.is_finite())) {
            return Err(SolverError::Invalid(format!("mass of vertex {i} must be positive")));
        }
        Ok(Self {
            predicted: positions.clone(),
            velocities: vec![Vec3::zeros(); n],
            positions,
            masses,
            pinned,
            time: 0.0,
        })
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    fn check_finite(&self, x: &[Vec3]) -> Result<(), SolverError> {
        match x.iter().position(|p| !(p.x.is_finite() && p.y.is_finite() && p.z.is_finite())) {
            Some(vertex) => Err(SolverError::Diverged {
                vertex,
                time: self.time,
            }),
            None => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Admm,
    Cg,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverParams {
    pub dt: f64,
    pub gravity: [f64; 3],
    /// Additional uniform external acceleration.
    pub wind: [f64; 3],
    pub admm_iterations: usize,
    pub cg_iterations: usize,
    /// Relative residual at which CG stops early; 0 runs all iterations.
    pub cg_tolerance: f64,
    /// Carry ADMM duals across steps instead of resetting them.
    pub warm_start: bool,
}

impl Default for SolverParams {
    fn default() -> Self {
        Self {
            dt: 1.0 / 150.0,
            gravity: [0.0, -9.8, 0.0],
            wind: [0.0; 3],
            admm_iterations: 20,
            cg_iterations: 100,
            cg_tolerance: 0.0,
            warm_start: true,
        }
    }
}

impl SolverParams {
    pub fn validate(&self) -> Result<(), SolverError> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(SolverError::Invalid(format!("dt must be positive, got {}", self.dt)));
        }
        if self.admm_iterations == 0 || self.cg_iterations == 0 {
            return Err(SolverError::Invalid("iteration counts must be at least 1".into()));
        }
        if !(self.cg_tolerance >= 0.0) {
            return Err(SolverError::Invalid("cg_tolerance must be non-negative".into()));
        }
        Ok(())
    }

    pub fn external_acceleration(&self) -> Vec3 {
        Vec3::from(self.gravity) + Vec3::from(self.wind)
    }
}

/// Applies external acceleration to velocities and writes `x̃ = x + v dt`.
/// Pinned vertices keep zero velocity and `x̃ = x`.
pub fn predict(state: &mut SolverState, params: &SolverParams) {
    let accel = params.external_acceleration();
    let dt = params.dt;
    for i in 0..state.len() {
        if state.pinned[i] {
            state.velocities[i] = Vec3::zeros();
            state.predicted[i] = state.positions[i];
        } else {
            state.velocities[i] += accel * dt;
            state.predicted[i] = state.positions[i] + state.velocities[i] * dt;
        }
    }
}

/// Objective of the implicit step: inertia term plus constraint energies.
pub fn energy(positions: &[Vec3], constraints: &[Constraint], predicted: &[Vec3], masses: &[f64], dt: f64) -> f64 {
    let scale = 0.5 / (dt * dt);
    let inertia: f64 = positions
        .iter()
        .zip(predicted)
        .zip(masses)
        .map(|((x, p), m)| m * (x - p).norm_squared())
        .sum::<f64>()
        * scale;
    inertia + constraints.iter().map(|c| c.energy(positions)).sum::<f64>()
}

/// Analytic gradient of [`energy`] with respect to every position.
pub fn energy_gradient(
    positions: &[Vec3],
    constraints: &[Constraint],
    predicted: &[Vec3],
    masses: &[f64],
    dt: f64,
) -> Vec<Vec3> {
    let inv = 1.0 / (dt * dt);
    let mut grad: Vec<Vec3> = positions
        .iter()
        .zip(predicted)
        .zip(masses)
        .map(|((x, p), m)| (x - p) * (m * inv))
        .collect();
    for c in constraints {
        let g = c.gradient_a(positions);
        grad[c.a] += g;
        grad[c.b] -= g;
    }
    grad
}

/// Per-scene solver: state, constraints, colliders and the chosen method.
#[derive(Debug, Clone)]
pub struct CoarseSolver {
    pub state: SolverState,
    pub constraints: Vec<Constraint>,
    pub primitives: Vec<CollisionPrimitive>,
    pub params: SolverParams,
    method: Method,
    system: Option<AdmmSystem>,
}

impl CoarseSolver {
    pub fn new(
        state: SolverState,
        mut constraints: Vec<Constraint>,
        primitives: Vec<CollisionPrimitive>,
        params: SolverParams,
        method: Method,
    ) -> Result<Self, SolverError> {
        params.validate()?;
        let n = state.len();
        if let Some(c) = constraints.iter().find(|c| c.a >= n || c.b >= n || c.a == c.b) {
            return Err(SolverError::Invalid(format!(
                "constraint ({}, {}) invalid for {n} vertices",
                c.a, c.b
            )));
        }
        for c in &mut constraints {
            c.reset_auxiliaries(&state.positions);
        }
        let system = match method {
            Method::Admm => Some(AdmmSystem::new(&state, &constraints, params.dt)?),
            Method::Cg => None,
        };
        Ok(Self {
            state,
            constraints,
            primitives,
            params,
            method,
            system,
        })
    }

    pub fn method(&self) -> Method {
        self.method
    }

    pub fn step(&mut self) -> Result<(), SolverError> {
        step_coarse(
            &mut self.state,
            &mut self.constraints,
            &self.primitives,
            &self.params,
            self.system.as_ref(),
        )
    }
}

/// predict → solve → collisions → pin enforcement; advances time by `dt`.
/// `system` selects ADMM when present, CG otherwise.
pub fn step_coarse(
    state: &mut SolverState,
    constraints: &mut [Constraint],
    primitives: &[CollisionPrimitive],
    params: &SolverParams,
    system: Option<&AdmmSystem>,
) -> Result<(), SolverError> {
    predict(state, params);
    match system {
        Some(sys) => step_admm(state, constraints, sys, params)?,
        None => {
            step_cg(state, constraints, params)?;
        }
    }
    resolve_collisions(&mut state.positions, &mut state.velocities, &state.pinned, primitives);
    for i in 0..state.len() {
        if state.pinned[i] {
            state.velocities[i] = Vec3::zeros();
        }
    }
    state.time += params.dt;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn predict_kinematics() {
        let mut s = SolverState::new(vec![Vec3::zeros(); 2], vec![1.0; 2], vec![false, true]).unwrap();
        let params = SolverParams {
            dt: 0.1,
            ..Default::default()
        };
        predict(&mut s, &params);
        assert!((s.velocities[0] - Vec3::new(0.0, -0.98, 0.0)).norm() < 1e-15);
        assert!((s.predicted[0] - Vec3::new(0.0, -0.098, 0.0)).norm() < 1e-15);
        assert_eq!(s.predicted[1], Vec3::zeros());
        assert_eq!(s.velocities[1], Vec3::zeros());

        let mut s = SolverState::new(vec![Vec3::new(1.0, 1.0, 1.0)], vec![1.0], vec![false]).unwrap();
        s.velocities[0] = Vec3::new(1.0, 0.0, 0.0);
        let params = SolverParams {
            dt: 0.5,
            gravity: [0.0; 3],
            ..Default::default()
        };
        predict(&mut s, &params);
        assert_eq!(s.predicted[0], Vec3::new(1.5, 1.0, 1.0));
    }

    #[test]
    fn energy_values() {
        let x = vec![Vec3::zeros(), Vec3::new(2.0, 0.0, 0.0)];
        let rest = Constraint::new(ConstraintKind::Spring, 0, 1, 2.0, 10.0).unwrap();
        assert_eq!(energy(&x, &[rest], &x, &[1.0, 1.0], 0.01), 0.0);
        let stretched = Constraint::new(ConstraintKind::Spring, 0, 1, 1.0, 10.0).unwrap();
        assert_eq!(energy(&x, &[stretched], &x, &[1.0, 1.0], 0.01), 5.0);
    }

    #[test]
    fn constraint_validation() {
        assert!(Constraint::new(ConstraintKind::Spring, 0, 1, 0.0, 1.0).is_err());
        assert!(Constraint::new(ConstraintKind::Spring, 0, 1, 1.0, -1.0).is_err());
        assert!(SolverState::new(vec![Vec3::zeros()], vec![0.0], vec![false]).is_err());
        let bad = SolverParams {
            dt: 0.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn grid_constraint_counts() {
        let mesh = crate::hierarchy::build_grid_mesh(2, 2, 1.0, 1.0).unwrap();
        let cs = build_constraints(&mesh, 10.0, 1.0).unwrap();
        let springs = cs.iter().filter(|c| c.kind == ConstraintKind::Spring).count();
        let bends = cs.len() - springs;
        // 16 edges, of which 8 lie on the boundary.
        assert_eq!((springs, bends), (16, 8));
    }
}
