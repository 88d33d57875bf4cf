use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// First and second moment estimates plus the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }
}

/// Bias-corrected Adam update `θ ← θ − lr · m̂ / (√v̂ + ε)`.
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState, cfg: &AdamConfig) {
    assert_eq!(params.len(), grads.len(), "parameter/gradient length mismatch");
    assert_eq!(params.len(), state.m.len(), "optimizer state length mismatch");
    state.t += 1;
    let c1 = 1.0 - cfg.beta1.powi(state.t as i32);
    let c2 = 1.0 - cfg.beta2.powi(state.t as i32);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
        let m_hat = state.m[i] / c1;
        let v_hat = state.v[i] / c2;
        params[i] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params_and_decays_moments() {
        let cfg = AdamConfig::default();
        let mut p = vec![0.5, -1.0];
        let mut st = AdamState::new(2);
        st.m = vec![0.2, 0.2];
        st.v = vec![0.1, 0.1];
        st.t = 0;
        adam_step(&mut p, &[0.0, 0.0], &mut st, &AdamConfig { learning_rate: 0.0, ..cfg });
        assert_eq!(p, vec![0.5, -1.0]);
        assert!((st.m[0] - 0.18).abs() < 1e-15);
        assert!((st.v[0] - 0.0999).abs() < 1e-15);

        let mut p = vec![0.5];
        let mut st = AdamState::new(1);
        adam_step(&mut p, &[0.0], &mut st, &cfg);
        assert_eq!(p, vec![0.5]);
    }

    #[test]
    fn first_step_magnitude() {
        let mut p = vec![0.0];
        let mut st = AdamState::new(1);
        adam_step(&mut p, &[1.0], &mut st, &AdamConfig::default());
        // m̂ = v̂ = 1, so the step is lr / (1 + ε).
        assert_eq!(p[0], -1e-3 / (1.0 + 1e-8));
        assert!((p[0] - -9.99999995e-4).abs() < 1e-11);
    }

    #[test]
    fn two_steps_match_scalar_trace() {
        let cfg = AdamConfig::default();
        let mut p = vec![0.3];
        let mut st = AdamState::new(1);
        adam_step(&mut p, &[0.5], &mut st, &cfg);
        adam_step(&mut p, &[-0.25], &mut st, &cfg);

        let (b1, b2, lr, eps): (f64, f64, f64, f64) = (0.9, 0.999, 1e-3, 1e-8);
        let (mut m, mut v, mut x) = (0.0, 0.0, 0.3);
        for (t, g) in [(1, 0.5), (2, -0.25)] {
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mh = m / (1.0 - b1.powi(t));
            let vh = v / (1.0 - b2.powi(t));
            x -= lr * mh / (vh.sqrt() + eps);
        }
        assert!((p[0] - x).abs() < 1e-12);
    }
}
