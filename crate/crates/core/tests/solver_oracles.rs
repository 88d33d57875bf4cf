use hcloth::harness::{Orientation, Pinning, Preset, Scene, SceneConfig, SimConfig};
use hcloth::solver::{
    energy, energy_gradient, implicit_euler_system, pcg_solve, CoarseSolver, CollisionPrimitive, Constraint,
    ConstraintKind, Method, SolverParams, SolverState,
};
use hcloth::Vec3;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_system(rng: &mut ChaCha8Rng) -> (Vec<Vec3>, Vec<Constraint>, Vec<Vec3>, Vec<f64>) {
    let n = 10;
    let x: Vec<Vec3> = (0..n)
        .map(|_| Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
        .collect();
    let predicted: Vec<Vec3> = x.iter().map(|p| p + Vec3::new(0.01, -0.02, 0.005) * rng.random_range(0.0..1.0)).collect();
    let masses: Vec<f64> = (0..n).map(|_| rng.random_range(0.01..0.1)).collect();
    let mut constraints = Vec::new();
    for _ in 0..25 {
        let a = rng.random_range(0..n);
        let b = (a + rng.random_range(1..n)) % n;
        let kind = if rng.random_bool(0.5) { ConstraintKind::Spring } else { ConstraintKind::Bending };
        let k = if kind == ConstraintKind::Spring { rng.random_range(100.0..1000.0) } else { rng.random_range(1.0..50.0) };
        constraints.push(Constraint::new(kind, a, b, rng.random_range(0.2..1.5), k).unwrap());
    }
    (x, constraints, predicted, masses)
}

#[test]
fn energy_gradient_matches_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let dt = 1.0 / 150.0;
    let h = 1e-6;
    for _ in 0..20 {
        let (x, cons, pred, m) = random_system(&mut rng);
        let g = energy_gradient(&x, &cons, &pred, &m, dt);
        let mut diff = 0.0;
        let mut norm = 0.0;
        for v in 0..x.len() {
            for d in 0..3 {
                let mut xp = x.clone();
                xp[v][d] += h;
                let mut xm = x.clone();
                xm[v][d] -= h;
                let fd = (energy(&xp, &cons, &pred, &m, dt) - energy(&xm, &cons, &pred, &m, dt)) / (2.0 * h);
                diff += (fd - g[v][d]).powi(2);
                norm += g[v][d].powi(2);
            }
        }
        assert!(diff.sqrt() / norm.sqrt() < 1e-4, "relative error {}", diff.sqrt() / norm.sqrt());
    }
}

fn displaced_cloth(seed: u64) -> (SolverState, Vec<Constraint>) {
    let cfg = SimConfig {
        scene: SceneConfig {
            nx: 4,
            ny: 3,
            finer_levels: 0,
            perturbation: 0.05,
            pinned: Pinning::TopCorners,
            ..SceneConfig::default()
        },
        ..Preset::Hang.config()
    };
    let cfg = SimConfig {
        run: hcloth::harness::RunConfig { seed, ..cfg.run.clone() },
        ..cfg
    };
    let scene = Scene::build(&cfg).unwrap();
    let solver = scene.solver(0, Method::Cg).unwrap();
    let mut state = solver.state;
    state.velocities.iter_mut().enumerate().for_each(|(i, v)| {
        if !state.pinned[i] {
            *v = Vec3::new(0.1, -0.2, 0.05 * i as f64);
        }
    });
    (state, solver.constraints)
}

#[test]
fn cg_matches_dense_direct_solve() {
    for seed in 0..3 {
        let (state, cons) = displaced_cloth(seed);
        let params = SolverParams::default();
        let (a, b) = implicit_euler_system(&state, &cons, &params);
        let n = a.dim();
        let dense = a.to_dense();
        let mat = DMatrix::from_fn(3 * n, 3 * n, |r, c| dense[r][c]);
        let rhs = DVector::from_iterator(3 * n, b.iter().flat_map(|v| [v.x, v.y, v.z]));
        let exact = mat.cholesky().expect("system is SPD").solve(&rhs);

        let mut x = vec![Vec3::zeros(); n];
        pcg_solve(&a, &b, &mut x, 10 * 3 * n, 1e-15);
        let scale = exact.amax();
        for i in 0..n {
            for d in 0..3 {
                assert!((x[i][d] - exact[3 * i + d]).abs() <= 1e-8 * scale.max(1.0));
            }
        }
    }
}

fn settle(method: Method, steps: usize) -> f64 {
    let state = SolverState::new(vec![Vec3::zeros(), Vec3::new(0.0, -1.0, 0.0)], vec![0.1, 0.1], vec![true, false]).unwrap();
    let c = Constraint::new(ConstraintKind::Spring, 0, 1, 1.0, 100.0).unwrap();
    let mut solver = CoarseSolver::new(state, vec![c], vec![], SolverParams::default(), method).unwrap();
    for _ in 0..steps {
        solver.step().unwrap();
    }
    -solver.state.positions[1].y - 1.0
}

#[test]
fn single_spring_settles_at_static_extension() {
    let expected = 0.1 * 9.8 / 100.0;
    for method in [Method::Admm, Method::Cg] {
        let ext = settle(method, 3000);
        assert!((ext - expected).abs() < 1e-4, "{method:?}: extension {ext}");
    }
}

#[test]
fn free_fall_matches_implicit_euler_kinematics() {
    let dt = 1.0 / 150.0;
    for method in [Method::Admm, Method::Cg] {
        let state = SolverState::new(vec![Vec3::new(0.0, 2.0, 0.0)], vec![0.3], vec![false]).unwrap();
        let mut solver = CoarseSolver::new(state, vec![], vec![], SolverParams::default(), method).unwrap();
        let (mut x, mut v) = (2.0f64, 0.0f64);
        for _ in 0..50 {
            solver.step().unwrap();
            v -= 9.8 * dt;
            x += v * dt;
        }
        assert!((solver.state.positions[0].y - x).abs() < 1e-12);
        assert!((solver.state.velocities[0].y - v).abs() < 1e-9);
    }
}

#[test]
fn cloth_never_penetrates_colliders() {
    let scene = Scene::build(&Preset::Sphere.config()).unwrap();
    let mut solver = scene.solver(0, Method::Admm).unwrap();
    let (center, radius) = match scene.config.collisions[0] {
        CollisionPrimitive::Sphere { center, radius, .. } => (Vec3::from(center), radius),
        _ => unreachable!(),
    };
    let mut touched = false;
    for _ in 0..300 {
        solver.step().unwrap();
        for p in &solver.state.positions {
            let d = (p - center).norm();
            assert!(d >= radius - 1e-9, "inside sphere by {}", radius - d);
            assert!(p.y >= -1e-9, "below floor");
            touched |= d < radius + 1e-3;
        }
    }
    assert!(touched, "cloth never reached the sphere");
}

fn mirror_scene() -> Scene {
    let cfg = SimConfig {
        name: "mirror".into(),
        scene: SceneConfig {
            nx: 6,
            ny: 6,
            width: 1.0,
            height: 1.0,
            finer_levels: 0,
            orientation: Orientation::Horizontal,
            origin: [0.0, 1.0, 0.0],
            pinned: Pinning::AntiDiagonalCorners,
            perturbation: 0.0,
        },
        solver: SolverParams::default(),
        ..SimConfig::default()
    };
    Scene::build(&cfg).unwrap()
}

#[test]
fn symmetric_setup_stays_mirror_symmetric() {
    let scene = mirror_scene();
    let n = 7;
    for method in [Method::Admm, Method::Cg] {
        let mut solver = scene.solver(0, method).unwrap();
        for _ in 0..100 {
            solver.step().unwrap();
        }
        let x = &solver.state.positions;
        let mut worst: f64 = 0.0;
        for j in 0..n {
            for i in 0..n {
                let p = x[j * n + i];
                let q = x[i * n + j];
                worst = worst.max((p - Vec3::new(q.z, q.y, q.x)).norm());
            }
        }
        assert!(worst < 1e-6, "{method:?}: asymmetry {worst}");
        // The cloth actually moved.
        assert!(x.iter().any(|p| p.y < 0.9));
    }
}

#[test]
fn hanging_cloth_equilibria_agree() {
    let cfg = SimConfig {
        scene: SceneConfig {
            nx: 4,
            ny: 4,
            width: 1.0,
            height: 1.0,
            finer_levels: 0,
            pinned: Pinning::TopCorners,
            perturbation: 0.0,
            ..SceneConfig::default()
        },
        solver: SolverParams::default(),
        ..Preset::Hang.config()
    };
    let scene = Scene::build(&cfg).unwrap();
    let mut finals = Vec::new();
    for method in [Method::Admm, Method::Cg] {
        let mut solver = scene.solver(0, method).unwrap();
        for _ in 0..2000 {
            solver.step().unwrap();
        }
        finals.push(solver.state.positions);
    }
    let worst = finals[0].iter().zip(&finals[1]).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
    assert!(worst < 1e-3, "equilibria differ by {worst}");
}
