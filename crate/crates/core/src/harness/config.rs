//! Scene configuration, read from TOML.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::solver::{CollisionPrimitive, SolverParams};

use super::HarnessError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Orientation {
    /// Grid spans X (width) and Y (height, up).
    Vertical,
    /// Grid spans X (width) and Z (height); Y is up.
    Horizontal,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Pinning {
    None,
    /// Grid corners `(0, ny)` and `(nx, ny)`.
    TopCorners,
    /// Grid corners `(0, 0)` and `(0, ny)`.
    LeftCorners,
    /// Grid corners `(nx, 0)` and `(0, ny)`, which mirror onto each other
    /// across the triangulation's diagonal.
    AntiDiagonalCorners,
    /// Explicit level-0 vertex indices.
    Vertices(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneConfig {
    pub nx: usize,
    pub ny: usize,
    pub width: f64,
    pub height: f64,
    pub finer_levels: usize,
    pub orientation: Orientation,
    pub origin: [f64; 3],
    pub pinned: Pinning,
    /// Amplitude (m) of seeded out-of-plane noise added to initial positions.
    pub perturbation: f64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            nx: 18,
            ny: 12,
            width: 1.8,
            height: 1.2,
            finer_levels: 2,
            orientation: Orientation::Vertical,
            origin: [0.0; 3],
            pinned: Pinning::LeftCorners,
            perturbation: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MaterialConfig {
    /// N/m, applied to every edge spring.
    pub spring_stiffness: f64,
    /// N/m, applied to every cross-edge bending spring.
    pub bending_stiffness: f64,
    /// kg, spread uniformly over the vertices of the simulated level.
    pub total_mass: f64,
}

impl Default for MaterialConfig {
    fn default() -> Self {
        Self {
            spring_stiffness: 1000.0,
            bending_stiffness: 20.0,
            total_mass: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunMethod {
    Admm,
    Cg,
    /// ADMM on level 0, neural inference for every finer level.
    Hybrid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub method: RunMethod,
    pub frames: usize,
    pub output: Option<PathBuf>,
    pub seed: u64,
    /// Inference workers; 1 runs sequentially.
    pub workers: usize,
    /// Levels written per frame; empty means all produced levels.
    pub export_levels: Vec<usize>,
    /// Push inferred finer-level vertices out of the colliders.
    pub project_fine_levels: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            method: RunMethod::Admm,
            frames: 300,
            output: None,
            seed: 0,
            workers: 1,
            export_levels: Vec::new(),
            project_fine_levels: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub name: String,
    pub scene: SceneConfig,
    pub material: MaterialConfig,
    pub solver: SolverParams,
    pub collisions: Vec<CollisionPrimitive>,
    /// Checkpoint per finer level, `models[i]` producing level `i + 1`.
    pub models: Vec<PathBuf>,
    pub run: RunConfig,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            name: "flag".into(),
            scene: SceneConfig::default(),
            material: MaterialConfig::default(),
            solver: SolverParams {
                wind: [2.0, 0.0, 3.0],
                ..SolverParams::default()
            },
            collisions: Vec::new(),
            models: Vec::new(),
            run: RunConfig::default(),
        }
    }
}

impl SimConfig {
    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        let cfg: Self = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|source| HarnessError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut cfg = Self::from_toml(&text)?;
        // Model paths are relative to the config file.
        if let Some(dir) = path.parent() {
            for m in &mut cfg.models {
                if m.is_relative() {
                    *m = dir.join(&*m);
                }
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Config(m));
        let s = &self.scene;
        if s.nx == 0 || s.ny == 0 || !(s.width > 0.0) || !(s.height > 0.0) {
            return bad(format!("grid {}x{} of {}x{} m is invalid", s.nx, s.ny, s.width, s.height));
        }
        if !(s.perturbation >= 0.0) {
            return bad("perturbation must be non-negative".into());
        }
        let m = &self.material;
        if !(m.spring_stiffness >= 0.0 && m.bending_stiffness >= 0.0) {
            return bad("stiffness values must be non-negative".into());
        }
        if !(m.total_mass > 0.0) {
            return bad("total mass must be positive".into());
        }
        self.solver.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        for c in &self.collisions {
            c.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        }
        if self.run.method == RunMethod::Hybrid && !self.models.is_empty() && self.models.len() != s.finer_levels {
            return bad(format!(
                "hybrid run has {} finer levels but {} model paths",
                s.finer_levels,
                self.models.len()
            ));
        }
        if self.run.workers == 0 {
            return bad("workers must be at least 1".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_nested_sections() {
        let text = r#"
            name = "demo"
            models = ["l1.hcsnn"]
            [scene]
            nx = 4
            ny = 3
            finer_levels = 1
            orientation = "horizontal"
            pinned = { vertices = [0, 4] }
            [material]
            spring_stiffness = 250.0
            [solver]
            dt = 0.01
            admm_iterations = 10
            [[collisions]]
            kind = "sphere"
            center = [0.5, -0.5, 0.5]
            radius = 0.3
            friction = 0.1
            [[collisions]]
            kind = "halfspace"
            normal = [0.0, 1.0, 0.0]
            offset = -1.0
            [run]
            method = "hybrid"
            frames = 12
        "#;
        let cfg = SimConfig::from_toml(text).unwrap();
        assert_eq!(cfg.scene.pinned, Pinning::Vertices(vec![0, 4]));
        assert_eq!(cfg.scene.orientation, Orientation::Horizontal);
        assert_eq!(cfg.solver.admm_iterations, 10);
        assert_eq!(cfg.solver.cg_iterations, 100);
        assert_eq!(cfg.collisions.len(), 2);
        assert_eq!(cfg.run.method, RunMethod::Hybrid);
        assert_eq!(cfg.material.total_mass, 0.5);

        let again = SimConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(again, cfg);
    }

    #[test]
    fn rejects_inconsistent_configs() {
        assert!(SimConfig::from_toml("[scene]\nnx = 0").is_err());
        assert!(SimConfig::from_toml("[solver]\ndt = -1.0").is_err());
        assert!(SimConfig::from_toml("models = [\"a\"]\n[run]\nmethod = \"hybrid\"").is_err());
        assert!(SimConfig::from_toml("[[collisions]]\nkind = \"sphere\"\ncenter = [0.0, 0.0, 0.0]\nradius = -1.0").is_err());
    }
}
