use nalgebra::Matrix3;

use super::sparse::BlockCsr;
use super::{Constraint, SolverError, SolverParams, SolverState};
use crate::Vec3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CgReport {
    pub iterations: usize,
    /// Final residual norm relative to the right-hand side norm.
    pub relative_residual: f64,
}

/// Spring Hessian block `∂²E/∂x_a²`, with the transverse term clamped at
/// zero so the block stays positive semidefinite under compression.
fn spring_hessian(c: &Constraint, x: &[Vec3]) -> Matrix3<f64> {
    let d = x[c.a] - x[c.b];
    let len = d.norm();
    if len == 0.0 {
        return Matrix3::identity() * c.stiffness;
    }
    let n = d / len;
    let nn = n * n.transpose();
    let transverse = (1.0 - c.rest_length / len).max(0.0);
    (nn + (Matrix3::identity() - nn) * transverse) * c.stiffness
}

/// Linearized implicit-Euler system `(M + dt² H) v = M v' − dt ∇U(x)` at the
/// current positions, where `v'` already includes the external acceleration.
/// Pinned vertices get an identity-mass row with zero right-hand side.
pub fn implicit_euler_system(
    state: &SolverState,
    constraints: &[Constraint],
    params: &SolverParams,
) -> (BlockCsr, Vec<Vec3>) {
    let n = state.len();
    let dt = params.dt;
    let dt2 = dt * dt;
    let x = &state.positions;
    let mut triplets = Vec::with_capacity(n + 4 * constraints.len());
    let mut rhs = Vec::with_capacity(n);
    for i in 0..n {
        triplets.push((i, i, Matrix3::identity() * state.masses[i]));
        rhs.push(if state.pinned[i] {
            Vec3::zeros()
        } else {
            state.velocities[i] * state.masses[i]
        });
    }
    for c in constraints {
        let (pa, pb) = (state.pinned[c.a], state.pinned[c.b]);
        let g = c.gradient_a(x) * dt;
        let h = spring_hessian(c, x) * dt2;
        if !pa {
            rhs[c.a] -= g;
            triplets.push((c.a, c.a, h));
        }
        if !pb {
            rhs[c.b] += g;
            triplets.push((c.b, c.b, h));
        }
        if !pa && !pb {
            triplets.push((c.a, c.b, -h));
            triplets.push((c.b, c.a, -h));
        }
    }
    (BlockCsr::from_triplets(n, triplets), rhs)
}

/// Jacobi-preconditioned conjugate gradients from initial guess `x`.
/// Stops after `max_iterations` or once `‖r‖ ≤ tolerance ‖b‖`.
pub fn pcg_solve(a: &BlockCsr, b: &[Vec3], x: &mut [Vec3], max_iterations: usize, tolerance: f64) -> CgReport {
    let n = a.dim();
    let inv_diag: Vec<Vec3> = (0..n)
        .map(|i| {
            let d = a.diagonal_block(i);
            Vec3::new(1.0 / d[(0, 0)], 1.0 / d[(1, 1)], 1.0 / d[(2, 2)])
        })
        .collect();
    let dot = |u: &[Vec3], v: &[Vec3]| -> f64 { u.iter().zip(v).map(|(p, q)| p.dot(q)).sum() };

    let b_norm = dot(b, b).sqrt();
    let mut r = vec![Vec3::zeros(); n];
    a.mul_into(x, &mut r);
    for (ri, bi) in r.iter_mut().zip(b) {
        *ri = bi - *ri;
    }
    let mut z: Vec<Vec3> = r.iter().zip(&inv_diag).map(|(ri, d)| ri.component_mul(d)).collect();
    let mut p = z.clone();
    let mut ap = vec![Vec3::zeros(); n];
    let mut rz = dot(&r, &z);
    let rel = |r: &[Vec3]| if b_norm > 0.0 { dot(r, r).sqrt() / b_norm } else { dot(r, r).sqrt() };

    let mut iterations = 0;
    while iterations < max_iterations {
        if rz == 0.0 || rel(&r) <= tolerance {
            break;
        }
        a.mul_into(&p, &mut ap);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            break;
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += p[i] * alpha;
            r[i] -= ap[i] * alpha;
            z[i] = r[i].component_mul(&inv_diag[i]);
        }
        let rz_next = dot(&r, &z);
        let beta = rz_next / rz;
        rz = rz_next;
        for i in 0..n {
            p[i] = z[i] + p[i] * beta;
        }
        iterations += 1;
    }
    CgReport {
        iterations,
        relative_residual: rel(&r),
    }
}

/// One linearized implicit-Euler step solved with CG. Expects [`super::predict`]
/// to have run; positions become `x + v dt` with the solved velocities.
pub fn step_cg(state: &mut SolverState, constraints: &[Constraint], params: &SolverParams) -> Result<CgReport, SolverError> {
    let (a, b) = implicit_euler_system(state, constraints, params);
    let mut v = state.velocities.clone();
    let report = pcg_solve(&a, &b, &mut v, params.cg_iterations, params.cg_tolerance);
    let dt = params.dt;
    let mut next = state.positions.clone();
    for i in 0..state.len() {
        if !state.pinned[i] {
            next[i] = state.positions[i] + v[i] * dt;
        }
    }
    state.check_finite(&next)?;
    for i in 0..state.len() {
        if !state.pinned[i] {
            state.positions[i] = next[i];
            state.velocities[i] = v[i];
        }
    }
    Ok(report)
}
