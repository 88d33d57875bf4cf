use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use hcloth::harness::{self, HarnessError, Preset, Scene, SimConfig};
use hcloth::hierarchy::{build_grid_mesh, build_hierarchy, ClothHierarchy, MeshError};
use hcloth::neural::{self, MlpModel, NeuralError, Schedule};
use hcloth::solver::{CoarseSolver, Method};
use hcloth::trainer::{self, Dataset, TrainConfig, TrainError};
use hcloth::Vec3;

fn harness_err(e: HarnessError) -> PyErr {
    match e {
        HarnessError::Config(_) => PyValueError::new_err(e.to_string()),
        HarnessError::Io { .. } => PyIOError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn neural_err(e: NeuralError) -> PyErr {
    match e {
        NeuralError::Io { .. } => PyIOError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn train_err(e: TrainError) -> PyErr {
    match e {
        TrainError::Io { .. } => PyIOError::new_err(e.to_string()),
        TrainError::NonFinite { .. } | TrainError::Scene { .. } => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn mesh_err(e: MeshError) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn points(v: &[Vec3]) -> Vec<[f64; 3]> {
    v.iter().map(|p| [p.x, p.y, p.z]).collect()
}

fn parse_preset(name: &str) -> PyResult<Preset> {
    Preset::ALL
        .into_iter()
        .find(|p| p.name() == name)
        .ok_or_else(|| PyValueError::new_err(format!("unknown preset {name:?}")))
}

fn parse_method(name: &str) -> PyResult<Method> {
    match name {
        "admm" => Ok(Method::Admm),
        "cg" => Ok(Method::Cg),
        _ => Err(PyValueError::new_err(format!("method must be \"admm\" or \"cg\", got {name:?}"))),
    }
}

/// Scene description; wraps the TOML config.
#[pyclass(name = "SimConfig", from_py_object)]
#[derive(Clone)]
struct PySimConfig {
    inner: SimConfig,
}

#[pymethods]
impl PySimConfig {
    #[staticmethod]
    fn preset(name: &str) -> PyResult<Self> {
        Ok(Self {
            inner: parse_preset(name)?.config(),
        })
    }

    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        Ok(Self {
            inner: SimConfig::from_toml(text).map_err(harness_err)?,
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: SimConfig::load(&path).map_err(harness_err)?,
        })
    }

    fn to_toml(&self) -> String {
        self.inner.to_toml()
    }

    #[getter]
    fn name(&self) -> String {
        self.inner.name.clone()
    }

    #[getter]
    fn finer_levels(&self) -> usize {
        self.inner.scene.finer_levels
    }

    #[setter]
    fn set_finer_levels(&mut self, n: usize) {
        self.inner.scene.finer_levels = n;
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.run.seed
    }

    #[setter]
    fn set_seed(&mut self, seed: u64) {
        self.inner.run.seed = seed;
    }

    fn __repr__(&self) -> String {
        format!(
            "SimConfig(name={:?}, grid={}x{}, finer_levels={})",
            self.inner.name, self.inner.scene.nx, self.inner.scene.ny, self.inner.scene.finer_levels
        )
    }
}

/// Subdivision hierarchy of a regular grid.
#[pyclass(name = "Hierarchy")]
struct PyHierarchy {
    inner: ClothHierarchy,
}

#[pymethods]
impl PyHierarchy {
    #[new]
    #[pyo3(signature = (nx, ny, width, height, finer_levels))]
    fn new(nx: usize, ny: usize, width: f64, height: f64, finer_levels: usize) -> PyResult<Self> {
        let base = build_grid_mesh(nx, ny, width, height).map_err(mesh_err)?;
        Ok(Self {
            inner: build_hierarchy(base, finer_levels).map_err(mesh_err)?,
        })
    }

    #[getter]
    fn finer_levels(&self) -> usize {
        self.inner.finer_levels()
    }

    /// `(vertices, edges, triangles)` of `level`.
    fn counts(&self, level: usize) -> PyResult<(usize, usize, usize)> {
        let m = self
            .inner
            .levels
            .get(level)
            .ok_or_else(|| PyValueError::new_err(format!("no level {level}")))?;
        Ok((m.vertex_count(), m.edge_count(), m.triangle_count()))
    }

    fn vertices(&self, level: usize) -> PyResult<Vec<[f64; 3]>> {
        self.counts(level)?;
        Ok(points(self.inner.rest_positions(level)))
    }

    fn triangles(&self, level: usize) -> PyResult<Vec<[usize; 3]>> {
        self.counts(level)?;
        Ok(self.inner.levels[level].triangles.clone())
    }

    fn dump_obj(&self, dir: PathBuf) -> PyResult<()> {
        self.inner.dump_obj(&dir).map_err(|e| PyIOError::new_err(e.to_string()))
    }
}

/// Per-level upsampling network.
#[pyclass(name = "Model", from_py_object)]
#[derive(Clone)]
struct PyModel {
    inner: MlpModel,
}

#[pymethods]
impl PyModel {
    #[staticmethod]
    fn zeros(level: u32, dims: Vec<usize>) -> PyResult<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(PyValueError::new_err("dims needs at least two positive sizes"));
        }
        Ok(Self {
            inner: MlpModel::zeros(level, &dims),
        })
    }

    #[staticmethod]
    #[pyo3(signature = (level, depth=3, width=32, seed=0))]
    fn random(level: u32, depth: usize, width: usize, seed: u64) -> PyResult<Self> {
        if depth == 0 || width == 0 {
            return Err(PyValueError::new_err("depth and width must be positive"));
        }
        Ok(Self {
            inner: MlpModel::init_seeded(level, &MlpModel::architecture(depth, width), seed),
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: neural::load_model(&path).map_err(neural_err)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        neural::save_model(&self.inner, &path).map_err(neural_err)
    }

    #[getter]
    fn level(&self) -> u32 {
        self.inner.level_index
    }

    #[getter]
    fn dims(&self) -> Vec<usize> {
        self.inner.dims()
    }

    #[getter]
    fn param_count(&self) -> usize {
        self.inner.param_count()
    }

    fn forward(&self, input: Vec<f64>) -> PyResult<Vec<f64>> {
        if input.len() != self.inner.input_dim() {
            return Err(PyValueError::new_err(format!(
                "expected {} inputs, got {}",
                self.inner.input_dim(),
                input.len()
            )));
        }
        Ok(self.inner.forward(&input))
    }

    fn __eq__(&self, other: &Self) -> bool {
        self.inner == other.inner
    }
}

/// Conventional solver on one level of a scene.
#[pyclass(name = "Simulator")]
struct PySimulator {
    scene: Scene,
    solver: CoarseSolver,
    level: usize,
}

#[pymethods]
impl PySimulator {
    #[new]
    #[pyo3(signature = (config, level=None, method="admm"))]
    fn new(config: &PySimConfig, level: Option<usize>, method: &str) -> PyResult<Self> {
        let scene = Scene::build(&config.inner).map_err(harness_err)?;
        let level = level.unwrap_or(scene.finer_levels());
        let solver = scene.solver(level, parse_method(method)?).map_err(harness_err)?;
        Ok(Self { scene, solver, level })
    }

    /// Advances `frames` steps and returns the final positions.
    #[pyo3(signature = (frames=1))]
    fn step(&mut self, frames: usize) -> PyResult<Vec<[f64; 3]>> {
        for _ in 0..frames {
            self.solver.step().map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
        }
        Ok(points(&self.solver.state.positions))
    }

    #[getter]
    fn positions(&self) -> Vec<[f64; 3]> {
        points(&self.solver.state.positions)
    }

    #[getter]
    fn time(&self) -> f64 {
        self.solver.state.time
    }

    #[getter]
    fn level(&self) -> usize {
        self.level
    }

    fn triangles(&self) -> Vec<[usize; 3]> {
        self.scene.hierarchy.levels[self.level].triangles.clone()
    }
}

/// Runs the hybrid pipeline and returns, per frame, the positions of every level.
#[pyfunction]
#[pyo3(signature = (config, models, frames, workers=1))]
fn run_hybrid(config: &PySimConfig, models: Vec<PyModel>, frames: usize, workers: usize) -> PyResult<Vec<Vec<Vec<[f64; 3]>>>> {
    let scene = Scene::build(&config.inner).map_err(harness_err)?;
    let models: Vec<MlpModel> = models.into_iter().map(|m| m.inner).collect();
    let frames = harness::run_hybrid(&scene, &models, frames, workers).map_err(harness_err)?;
    Ok(frames
        .into_iter()
        .map(|f| f.levels.iter().map(|l| points(l)).collect())
        .collect())
}

/// Level `coarse_level + 1` positions inferred from `positions` on `coarse_level`.
#[pyfunction]
fn infer_level(model: &PyModel, config: &PySimConfig, coarse_level: usize, positions: Vec<[f64; 3]>) -> PyResult<Vec<[f64; 3]>> {
    let scene = Scene::build(&config.inner).map_err(harness_err)?;
    if coarse_level >= scene.hierarchy.levels.len() || positions.len() != scene.vertex_count(coarse_level) {
        return Err(PyValueError::new_err("positions do not match the coarse level"));
    }
    let x: Vec<Vec3> = positions.into_iter().map(Vec3::from).collect();
    let fine = neural::infer_level(&model.inner, &scene.hierarchy, coarse_level, &x, Schedule::Sequential)
        .map_err(neural_err)?;
    Ok(points(&fine))
}

/// Simulates `configs` and writes a dataset for `level` to `path`; returns the sample count.
#[pyfunction]
#[pyo3(signature = (configs, level, frames, path, seed=0))]
fn generate_dataset(configs: Vec<PySimConfig>, level: usize, frames: usize, path: PathBuf, seed: u64) -> PyResult<usize> {
    let scenes: Vec<SimConfig> = configs.into_iter().map(|c| c.inner).collect();
    let ds = trainer::generate_dataset(&scenes, level, frames, seed).map_err(train_err)?;
    ds.save(&path).map_err(train_err)?;
    Ok(ds.len())
}

/// Trains on the dataset at `path`; returns the model and `(epoch, loss)` pairs.
#[pyfunction]
#[pyo3(signature = (path, epochs=500, batch_size=256, learning_rate=1e-3, depth=3, width=32, seed=0, checkpoints=None, checkpoint_dir=None))]
#[allow(clippy::too_many_arguments)]
fn train(
    path: PathBuf,
    epochs: usize,
    batch_size: usize,
    learning_rate: f64,
    depth: usize,
    width: usize,
    seed: u64,
    checkpoints: Option<Vec<usize>>,
    checkpoint_dir: Option<PathBuf>,
) -> PyResult<(PyModel, Vec<(usize, f64)>)> {
    let ds = Dataset::load(&path).map_err(train_err)?;
    let mut cfg = TrainConfig {
        epochs,
        batch_size,
        depth,
        width,
        seed,
        checkpoints: checkpoints.unwrap_or_else(|| vec![epochs]),
        ..TrainConfig::default()
    };
    cfg.adam.learning_rate = learning_rate;
    let out = trainer::train(&ds, &cfg, checkpoint_dir.as_deref()).map_err(train_err)?;
    Ok((PyModel { inner: out.model }, out.log.entries))
}

#[pymodule]
fn hcloth_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PySimConfig>()?;
    m.add_class::<PyHierarchy>()?;
    m.add_class::<PyModel>()?;
    m.add_class::<PySimulator>()?;
    m.add_function(wrap_pyfunction!(run_hybrid, m)?)?;
    m.add_function(wrap_pyfunction!(infer_level, m)?)?;
    m.add_function(wrap_pyfunction!(generate_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add("PRESETS", Preset::ALL.map(|p| p.name()).to_vec())?;
    Ok(())
}
