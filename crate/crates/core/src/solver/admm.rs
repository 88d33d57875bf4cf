use super::sparse::EnvelopeCholesky;
use super::{energy, Constraint, SolverError, SolverState, SolverParams};
use crate::Vec3;

/// Prefactorized global matrix `M/dt² + Σ w² DᵀD` over the free vertices.
///
/// Valid as long as masses, pins, constraint topology, stiffness and `dt`
/// stay fixed.
#[derive(Debug, Clone)]
pub struct AdmmSystem {
    /// `slot[v]` is the row of vertex `v`, `None` when pinned.
    slot: Vec<Option<usize>>,
    free: Vec<usize>,
    factor: EnvelopeCholesky,
    dt: f64,
    constraint_count: usize,
}

impl AdmmSystem {
    pub fn new(state: &SolverState, constraints: &[Constraint], dt: f64) -> Result<Self, SolverError> {
        let mut slot = vec![None; state.len()];
        let mut free = Vec::new();
        for (v, &p) in state.pinned.iter().enumerate() {
            if !p {
                slot[v] = Some(free.len());
                free.push(v);
            }
        }
        let inv_dt2 = 1.0 / (dt * dt);
        let mut diagonal: Vec<f64> = free.iter().map(|&v| state.masses[v] * inv_dt2).collect();
        let mut off = Vec::new();
        for c in constraints {
            let w2 = c.stiffness;
            match (slot[c.a], slot[c.b]) {
                (Some(a), Some(b)) => {
                    diagonal[a] += w2;
                    diagonal[b] += w2;
                    off.push((a, b, -w2));
                }
                (Some(a), None) => diagonal[a] += w2,
                (None, Some(b)) => diagonal[b] += w2,
                (None, None) => {}
            }
        }
        let factor = EnvelopeCholesky::factor(&diagonal, &off).map_err(|e| SolverError::NotPositiveDefinite {
            row: free[e.row],
            pivot: e.pivot,
        })?;
        Ok(Self {
            slot,
            free,
            factor,
            dt,
            constraint_count: constraints.len(),
        })
    }

    pub fn free_count(&self) -> usize {
        self.free.len()
    }

    pub fn factor_nnz(&self) -> usize {
        self.factor.nnz()
    }
}

/// Closed-form minimizer of `½k(|z| − L)² + ½w²|z − v|²` with `w² = k`.
#[inline]
fn project(c: &Constraint, v: Vec3) -> Vec3 {
    let len = v.norm();
    if len == 0.0 || c.stiffness == 0.0 {
        return v;
    }
    let w2 = c.stiffness;
    let target = (c.stiffness * c.rest_length + w2 * len) / (c.stiffness + w2);
    v * (target / len)
}

/// Projective-dynamics ADMM solve of the implicit step, starting from `x̃`.
///
/// Each round projects every constraint locally, solves the global system,
/// then updates the duals. Among `x̃` and all iterates, the one with the
/// lowest objective is written back, so the returned objective never
/// exceeds the objective at `x̃`. Velocities become `(x_new − x_old)/dt`.
pub fn step_admm(
    state: &mut SolverState,
    constraints: &mut [Constraint],
    system: &AdmmSystem,
    params: &SolverParams,
) -> Result<(), SolverError> {
    if system.slot.len() != state.len() || system.constraint_count != constraints.len() || system.dt != params.dt {
        return Err(SolverError::Invalid(
            "ADMM system was factored for a different scene or time step".into(),
        ));
    }
    let dt = params.dt;
    let inv_dt2 = 1.0 / (dt * dt);
    if !params.warm_start {
        for c in constraints.iter_mut() {
            c.u = Vec3::zeros();
        }
    }

    let mut base: Vec<Vec3> = system
        .free
        .iter()
        .map(|&v| state.predicted[v] * (state.masses[v] * inv_dt2))
        .collect();
    for c in constraints.iter() {
        match (system.slot[c.a], system.slot[c.b]) {
            (Some(a), None) => base[a] += state.predicted[c.b] * c.stiffness,
            (None, Some(b)) => base[b] += state.predicted[c.a] * c.stiffness,
            _ => {}
        }
    }

    let mut x = state.predicted.clone();
    let mut best = x.clone();
    let mut best_energy = energy(&x, constraints, &state.predicted, &state.masses, dt);
    let mut rhs = vec![Vec3::zeros(); system.free.len()];

    for _ in 0..params.admm_iterations {
        rhs.copy_from_slice(&base);
        for c in constraints.iter_mut() {
            let z = project(c, x[c.a] - x[c.b] + c.u);
            c.z = z;
            let t = (z - c.u) * c.stiffness;
            if let Some(a) = system.slot[c.a] {
                rhs[a] += t;
            }
            if let Some(b) = system.slot[c.b] {
                rhs[b] -= t;
            }
        }

        let solved = system.factor.solve(&rhs);
        for (&v, p) in system.free.iter().zip(solved) {
            x[v] = p;
        }
        state.check_finite(&x)?;

        for c in constraints.iter_mut() {
            c.u += x[c.a] - x[c.b] - c.z;
        }
        let e = energy(&x, constraints, &state.predicted, &state.masses, dt);
        if e < best_energy {
            best_energy = e;
            best.copy_from_slice(&x);
        }
    }

    for &v in &system.free {
        state.velocities[v] = (best[v] - state.positions[v]) / dt;
        state.positions[v] = best[v];
    }
    Ok(())
}
