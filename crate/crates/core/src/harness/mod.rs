//! Scene setup, conventional and hybrid simulation loops, OBJ export and
//! timing benchmarks.

mod bench;
mod config;
mod scene;

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::ThreadPool;
use thiserror::Error;

use crate::hierarchy::{write_obj, MeshError};
use crate::neural::{infer_level, load_model, MlpModel, NeuralError, Schedule, FEATURE_DIM};
use crate::solver::{resolve_collisions, Method, SolverError};
use crate::Vec3;

pub use bench::{bench_scene, write_bench_csv, BenchOptions, BenchRow};
pub use config::{MaterialConfig, Orientation, Pinning, RunConfig, RunMethod, SceneConfig, SimConfig};
pub use scene::{pinned_vertices, Preset, Scene};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error("solver setup failed: {0}")]
    Setup(#[from] SolverError),
    #[error("solver failed at frame {frame}: {source}")]
    Solver {
        frame: usize,
        #[source]
        source: SolverError,
    },
    #[error("inference of level {level} failed at frame {frame}: {source}")]
    Inference {
        frame: usize,
        level: usize,
        #[source]
        source: NeuralError,
    },
    #[error("model {path}: {source}")]
    Model {
        path: String,
        #[source]
        source: NeuralError,
    },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
}

fn io_error(path: &Path) -> impl FnOnce(io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Positions of consecutive levels after one simulated frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    /// 1-based frame number.
    pub index: usize,
    /// Level of `levels[0]`.
    pub first_level: usize,
    pub levels: Vec<Vec<Vec3>>,
    /// Wall time of the step including inference.
    pub seconds: f64,
}

impl Frame {
    pub fn level(&self, level: usize) -> Option<&[Vec3]> {
        level
            .checked_sub(self.first_level)
            .and_then(|k| self.levels.get(k))
            .map(Vec::as_slice)
    }

    pub fn last_level(&self) -> usize {
        self.first_level + self.levels.len() - 1
    }
}

/// Steps a conventional solver on `level` for `frames` frames, handing each
/// frame to `sink`.
pub fn run_conventional_with<F>(
    scene: &Scene,
    level: usize,
    method: Method,
    frames: usize,
    mut sink: F,
) -> Result<(), HarnessError>
where
    F: FnMut(&Frame) -> Result<(), HarnessError>,
{
    let mut solver = scene.solver(level, method)?;
    for index in 1..=frames {
        let start = Instant::now();
        solver
            .step()
            .map_err(|source| HarnessError::Solver { frame: index, source })?;
        let seconds = start.elapsed().as_secs_f64();
        sink(&Frame {
            index,
            first_level: level,
            levels: vec![solver.state.positions.clone()],
            seconds,
        })?;
    }
    Ok(())
}

pub fn run_conventional(scene: &Scene, level: usize, method: Method, frames: usize) -> Result<Vec<Frame>, HarnessError> {
    let mut out = Vec::with_capacity(frames);
    run_conventional_with(scene, level, method, frames, |f| {
        out.push(f.clone());
        Ok(())
    })?;
    Ok(out)
}

/// Checks that `models[i]` maps level `i` to level `i + 1` for every finer
/// level of `scene`.
pub fn check_models(scene: &Scene, models: &[MlpModel]) -> Result<(), HarnessError> {
    if models.len() != scene.finer_levels() {
        return Err(HarnessError::Config(format!(
            "scene has {} finer levels but {} models were given",
            scene.finer_levels(),
            models.len()
        )));
    }
    for (i, m) in models.iter().enumerate() {
        if m.level_index as usize != i + 1 {
            return Err(HarnessError::Config(format!(
                "model {i} targets level {} instead of {}",
                m.level_index,
                i + 1
            )));
        }
        if m.input_dim() != FEATURE_DIM || m.output_dim() != FEATURE_DIM {
            return Err(HarnessError::Config(format!(
                "model {i} maps {} to {} values",
                m.input_dim(),
                m.output_dim()
            )));
        }
    }
    Ok(())
}

pub fn load_models(paths: &[PathBuf]) -> Result<Vec<MlpModel>, HarnessError> {
    paths
        .iter()
        .map(|p| {
            load_model(p).map_err(|source| HarnessError::Model {
                path: p.display().to_string(),
                source,
            })
        })
        .collect()
}

/// Thread pool for `workers > 1`; `None` means sequential inference.
pub fn inference_pool(workers: usize) -> Result<Option<ThreadPool>, HarnessError> {
    if workers <= 1 {
        return Ok(None);
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map(Some)
        .map_err(|e| HarnessError::Config(format!("cannot start {workers} workers: {e}")))
}

/// ADMM on level 0, then one inference pass per finer level, every frame.
pub fn run_hybrid_with<F>(
    scene: &Scene,
    models: &[MlpModel],
    frames: usize,
    workers: usize,
    mut sink: F,
) -> Result<(), HarnessError>
where
    F: FnMut(&Frame) -> Result<(), HarnessError>,
{
    check_models(scene, models)?;
    let pool = inference_pool(workers)?;
    let schedule = match &pool {
        Some(p) => Schedule::Pool(p),
        None => Schedule::Sequential,
    };
    let mut solver = scene.solver(0, Method::Admm)?;
    let project = scene.config.run.project_fine_levels && !scene.config.collisions.is_empty();
    for index in 1..=frames {
        let start = Instant::now();
        solver
            .step()
            .map_err(|source| HarnessError::Solver { frame: index, source })?;
        let mut levels = Vec::with_capacity(models.len() + 1);
        levels.push(solver.state.positions.clone());
        for (i, model) in models.iter().enumerate() {
            let mut fine = infer_level(model, &scene.hierarchy, i, &levels[i], schedule).map_err(|source| {
                HarnessError::Inference {
                    frame: index,
                    level: i + 1,
                    source,
                }
            })?;
            if project {
                let mut scratch = vec![Vec3::zeros(); fine.len()];
                resolve_collisions(&mut fine, &mut scratch, &[], &scene.config.collisions);
            }
            levels.push(fine);
        }
        let seconds = start.elapsed().as_secs_f64();
        sink(&Frame {
            index,
            first_level: 0,
            levels,
            seconds,
        })?;
    }
    Ok(())
}

pub fn run_hybrid(scene: &Scene, models: &[MlpModel], frames: usize, workers: usize) -> Result<Vec<Frame>, HarnessError> {
    let mut out = Vec::with_capacity(frames);
    run_hybrid_with(scene, models, frames, workers, |f| {
        out.push(f.clone());
        Ok(())
    })?;
    Ok(out)
}

/// Writes `frame_{index:05}_l{level}.obj` under `dir` for each level of
/// `frame` in `levels` (all levels when empty). Returns the written paths.
pub fn export_frame(scene: &Scene, frame: &Frame, levels: &[usize], dir: &Path) -> Result<Vec<PathBuf>, HarnessError> {
    std::fs::create_dir_all(dir).map_err(io_error(dir))?;
    let mut written = Vec::new();
    for (k, positions) in frame.levels.iter().enumerate() {
        let level = frame.first_level + k;
        if !levels.is_empty() && !levels.contains(&level) {
            continue;
        }
        let path = dir.join(format!("frame_{:05}_l{}.obj", frame.index, level));
        let mut out = BufWriter::new(File::create(&path).map_err(io_error(&path))?);
        write_obj(positions, &scene.hierarchy.levels[level].triangles, &mut out).map_err(io_error(&path))?;
        out.flush().map_err(io_error(&path))?;
        written.push(path);
    }
    Ok(written)
}

/// Summary of a [`simulate`] call.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub frames: usize,
    pub finest_level: usize,
    pub masses: usize,
    pub mean_ms: f64,
    pub files: usize,
}

/// Runs the scene described by `config` with its `[run]` settings,
/// exporting OBJ frames when an output directory is configured.
/// Conventional methods simulate `level`, defaulting to the finest level.
pub fn simulate(config: &SimConfig, level: Option<usize>, models: Option<&[MlpModel]>) -> Result<RunSummary, HarnessError> {
    let scene = Scene::build(config)?;
    let run = &config.run;
    let mut total = 0.0;
    let mut files = 0;
    let mut last_level = 0;
    let mut sink = |f: &Frame| -> Result<(), HarnessError> {
        total += f.seconds;
        last_level = f.last_level();
        if let Some(dir) = &run.output {
            files += export_frame(&scene, f, &run.export_levels, dir)?.len();
        }
        log::debug!("frame {} took {:.3} ms", f.index, f.seconds * 1e3);
        Ok(())
    };
    match run.method {
        RunMethod::Hybrid => {
            let loaded;
            let models = match models {
                Some(m) => m,
                None => {
                    loaded = load_models(&config.models)?;
                    &loaded
                }
            };
            log::info!("hybrid run with {} inference workers", run.workers);
            run_hybrid_with(&scene, models, run.frames, run.workers, &mut sink)?;
        }
        RunMethod::Admm | RunMethod::Cg => {
            let method = if run.method == RunMethod::Admm { Method::Admm } else { Method::Cg };
            let level = level.unwrap_or(scene.finer_levels());
            run_conventional_with(&scene, level, method, run.frames, &mut sink)?;
        }
    }
    Ok(RunSummary {
        frames: run.frames,
        finest_level: last_level,
        masses: scene.vertex_count(last_level),
        mean_ms: if run.frames > 0 { total * 1e3 / run.frames as f64 } else { 0.0 },
        files,
    })
}
