//! Scene presets and construction of meshes, states and solvers from a config.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::hierarchy::{build_grid_mesh, build_hierarchy, ClothHierarchy};
use crate::solver::{build_constraints, CollisionPrimitive, CoarseSolver, Method, SolverParams, SolverState};
use crate::Vec3;

use super::config::{Orientation, Pinning, RunConfig, SceneConfig, SimConfig};
use super::HarnessError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    /// Vertical flag held at its left edge corners, blown by wind.
    Flag,
    /// Square cloth hanging from its two top corners.
    Hang,
    /// Horizontal cloth dropped onto a sphere above a floor.
    Sphere,
    /// Soft cloth pulled down by a strong downward wind.
    Stretch,
}

impl Preset {
    pub const ALL: [Preset; 4] = [Preset::Flag, Preset::Hang, Preset::Sphere, Preset::Stretch];

    pub fn name(self) -> &'static str {
        match self {
            Preset::Flag => "flag",
            Preset::Hang => "hang",
            Preset::Sphere => "sphere",
            Preset::Stretch => "stretch",
        }
    }

    pub fn config(self) -> SimConfig {
        let base = SimConfig::default();
        match self {
            Preset::Flag => SimConfig {
                name: "flag".into(),
                ..base
            },
            Preset::Hang => SimConfig {
                name: "hang".into(),
                scene: SceneConfig {
                    nx: 12,
                    ny: 12,
                    width: 1.0,
                    height: 1.0,
                    pinned: Pinning::TopCorners,
                    ..SceneConfig::default()
                },
                solver: SolverParams {
                    wind: [0.0, 0.0, 0.5],
                    ..SolverParams::default()
                },
                ..base
            },
            Preset::Sphere => SimConfig {
                name: "sphere".into(),
                scene: SceneConfig {
                    nx: 16,
                    ny: 16,
                    width: 1.6,
                    height: 1.6,
                    orientation: Orientation::Horizontal,
                    origin: [0.0, 1.0, 0.0],
                    pinned: Pinning::None,
                    ..SceneConfig::default()
                },
                solver: SolverParams::default(),
                collisions: vec![
                    CollisionPrimitive::Sphere {
                        center: [0.8, 0.5, 0.8],
                        radius: 0.35,
                        friction: 0.3,
                    },
                    CollisionPrimitive::HalfSpace {
                        normal: [0.0, 1.0, 0.0],
                        offset: 0.0,
                        friction: 0.5,
                    },
                ],
                ..base
            },
            Preset::Stretch => SimConfig {
                name: "stretch".into(),
                scene: SceneConfig {
                    nx: 12,
                    ny: 12,
                    width: 1.0,
                    height: 1.0,
                    pinned: Pinning::TopCorners,
                    ..SceneConfig::default()
                },
                material: super::config::MaterialConfig {
                    spring_stiffness: 300.0,
                    bending_stiffness: 5.0,
                    ..Default::default()
                },
                solver: SolverParams {
                    wind: [0.0, -6.0, 1.0],
                    ..SolverParams::default()
                },
                ..base
            },
        }
    }
}

/// Level-0 vertex indices pinned by `pinning` on an `nx` x `ny` grid.
pub fn pinned_vertices(pinning: &Pinning, nx: usize, ny: usize) -> Result<Vec<usize>, HarnessError> {
    let id = |i: usize, j: usize| j * (nx + 1) + i;
    let count = (nx + 1) * (ny + 1);
    let v = match pinning {
        Pinning::None => vec![],
        Pinning::TopCorners => vec![id(0, ny), id(nx, ny)],
        Pinning::LeftCorners => vec![id(0, 0), id(0, ny)],
        Pinning::AntiDiagonalCorners => vec![id(nx, 0), id(0, ny)],
        Pinning::Vertices(v) => {
            if let Some(&bad) = v.iter().find(|&&i| i >= count) {
                return Err(HarnessError::Config(format!(
                    "pinned vertex {bad} out of range for {count} vertices"
                )));
            }
            v.clone()
        }
    };
    Ok(v)
}

/// A built scene: hierarchy with world-space rest positions and the initial
/// (possibly perturbed) positions of the finest level.
#[derive(Debug, Clone)]
pub struct Scene {
    pub config: SimConfig,
    pub hierarchy: ClothHierarchy,
    /// Initial positions of the finest level. Coarser levels use a prefix.
    pub initial: Vec<Vec3>,
}

impl Scene {
    pub fn build(config: &SimConfig) -> Result<Scene, HarnessError> {
        config.validate()?;
        let s = &config.scene;
        let mut base = build_grid_mesh(s.nx, s.ny, s.width, s.height)?;
        let origin = Vec3::from(s.origin);
        for v in &mut base.vertices {
            *v = origin
                + match s.orientation {
                    Orientation::Vertical => *v,
                    Orientation::Horizontal => Vec3::new(v.x, 0.0, v.y),
                };
        }
        base.pinned.extend(pinned_vertices(&s.pinned, s.nx, s.ny)?);
        let hierarchy = build_hierarchy(base, s.finer_levels)?;

        let normal = match s.orientation {
            Orientation::Vertical => Vec3::z(),
            Orientation::Horizontal => Vec3::y(),
        };
        let finest = hierarchy.finest();
        let mut rng = ChaCha8Rng::seed_from_u64(config.run.seed);
        let initial = finest
            .vertices
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let r: f64 = if s.perturbation > 0.0 {
                    rng.random_range(-1.0..1.0)
                } else {
                    0.0
                };
                if finest.pinned.contains(&i) {
                    x
                } else {
                    x + normal * (r * s.perturbation)
                }
            })
            .collect();
        Ok(Scene {
            config: config.clone(),
            hierarchy,
            initial,
        })
    }

    pub fn preset(preset: Preset, run: RunConfig) -> Result<Scene, HarnessError> {
        Scene::build(&SimConfig {
            run,
            ..preset.config()
        })
    }

    pub fn finer_levels(&self) -> usize {
        self.hierarchy.finer_levels()
    }

    pub fn vertex_count(&self, level: usize) -> usize {
        self.hierarchy.levels[level].vertex_count()
    }

    /// Solver state for `level` with uniform masses `total_mass / V`.
    pub fn state(&self, level: usize) -> Result<SolverState, HarnessError> {
        let mesh = self.level(level)?;
        let n = mesh.vertex_count();
        let mut state = SolverState::at_rest(mesh, self.config.material.total_mass)?;
        state.positions.copy_from_slice(&self.initial[..n]);
        state.predicted.copy_from_slice(&self.initial[..n]);
        Ok(state)
    }

    pub fn solver(&self, level: usize, method: Method) -> Result<CoarseSolver, HarnessError> {
        self.solver_with(level, method, &self.config.collisions)
    }

    pub fn solver_with(
        &self,
        level: usize,
        method: Method,
        primitives: &[CollisionPrimitive],
    ) -> Result<CoarseSolver, HarnessError> {
        let mesh = self.level(level)?;
        let m = &self.config.material;
        let constraints = build_constraints(mesh, m.spring_stiffness, m.bending_stiffness)?;
        Ok(CoarseSolver::new(
            self.state(level)?,
            constraints,
            primitives.to_vec(),
            self.config.solver.clone(),
            method,
        )?)
    }

    fn level(&self, level: usize) -> Result<&crate::hierarchy::TriMesh, HarnessError> {
        self.hierarchy.levels.get(level).ok_or_else(|| {
            HarnessError::Config(format!(
                "level {level} requested but the scene has {} finer levels",
                self.finer_levels()
            ))
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_build_and_validate() {
        for p in Preset::ALL {
            let scene = Scene::build(&p.config()).unwrap();
            assert_eq!(scene.config.name, p.name());
            assert_eq!(scene.initial.len(), scene.hierarchy.finest().vertex_count());
            scene.solver(0, Method::Admm).unwrap();
        }
    }

    #[test]
    fn flag_grid_counts() {
        let scene = Scene::build(&Preset::Flag.config()).unwrap();
        assert_eq!(scene.vertex_count(0), 19 * 13);
        assert_eq!(scene.vertex_count(2), 73 * 49);
    }

    #[test]
    fn initial_positions_are_nested_prefixes_and_pins_are_exact() {
        let scene = Scene::build(&Preset::Hang.config()).unwrap();
        let coarse = scene.state(0).unwrap();
        let fine = scene.state(2).unwrap();
        assert_eq!(coarse.positions[..], fine.positions[..coarse.len()]);
        for &p in &scene.hierarchy.levels[0].pinned {
            assert_eq!(coarse.positions[p], scene.hierarchy.levels[0].vertices[p]);
            assert!(coarse.pinned[p]);
        }
        let total: f64 = fine.masses.iter().sum();
        assert!((total - 0.5).abs() < 1e-12);
    }

    #[test]
    fn horizontal_orientation_lies_in_xz() {
        let mut cfg = Preset::Sphere.config();
        cfg.scene.perturbation = 0.0;
        let scene = Scene::build(&cfg).unwrap();
        assert!(scene.initial.iter().all(|v| v.y == 1.0));
        let max_z = scene.initial.iter().map(|v| v.z).fold(0.0, f64::max);
        assert_eq!(max_z, 1.6);
    }

    #[test]
    fn explicit_pins_are_range_checked() {
        assert!(pinned_vertices(&Pinning::Vertices(vec![4]), 1, 1).is_err());
        assert_eq!(pinned_vertices(&Pinning::AntiDiagonalCorners, 2, 2).unwrap(), vec![2, 6]);
    }
}
