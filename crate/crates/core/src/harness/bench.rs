//! Per-frame timing of the conventional and hybrid simulators.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use crate::neural::{infer_level, MlpModel, Schedule};
use crate::solver::{CoarseSolver, Method};

use super::{check_models, inference_pool, io_error, HarnessError, Scene};

#[derive(Debug, Clone, PartialEq)]
pub struct BenchOptions {
    /// Timed frames per method.
    pub frames: usize,
    /// Untimed frames run first.
    pub warmup: usize,
    pub workers: usize,
    /// Also time every method with collision handling disabled.
    pub without_collisions: bool,
}

impl Default for BenchOptions {
    fn default() -> Self {
        Self {
            frames: 100,
            warmup: 10,
            workers: 1,
            without_collisions: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub scene: String,
    pub method: String,
    /// Vertex count of the finest mesh produced.
    pub masses: usize,
    pub mean_ms: f64,
    pub std_ms: f64,
    pub frames: usize,
}

fn stats(samples: &[f64]) -> (f64, f64) {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = if samples.len() > 1 {
        samples.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

fn time_frames<F>(opts: &BenchOptions, mut frame: F) -> Result<Vec<f64>, HarnessError>
where
    F: FnMut(usize) -> Result<(), HarnessError>,
{
    for i in 0..opts.warmup {
        frame(i + 1)?;
    }
    let mut ms = Vec::with_capacity(opts.frames);
    for i in 0..opts.frames {
        let start = Instant::now();
        frame(opts.warmup + i + 1)?;
        ms.push(start.elapsed().as_secs_f64() * 1e3);
    }
    Ok(ms)
}

fn step(solver: &mut CoarseSolver, frame: usize) -> Result<(), HarnessError> {
    solver.step().map_err(|source| HarnessError::Solver { frame, source })
}

/// Times CG and ADMM on the finest level and the hybrid pipeline (ADMM on
/// level 0 plus inference) producing the same finest level. CG always runs
/// its full iteration budget.
pub fn bench_scene(scene: &Scene, models: &[MlpModel], opts: &BenchOptions) -> Result<Vec<BenchRow>, HarnessError> {
    if opts.frames == 0 {
        return Err(HarnessError::Config("benchmark needs at least one timed frame".into()));
    }
    check_models(scene, models)?;
    let mut scene = scene.clone();
    scene.config.solver.cg_tolerance = 0.0;
    let finest = scene.finer_levels();
    let masses = scene.vertex_count(finest);
    let pool = inference_pool(opts.workers)?;
    let schedule = match &pool {
        Some(p) => Schedule::Pool(p),
        None => Schedule::Sequential,
    };
    log::info!(
        "benchmarking {} ({} masses, {} frames after {} warm-up, {} inference workers)",
        scene.config.name,
        masses,
        opts.frames,
        opts.warmup,
        opts.workers
    );

    let mut variants = vec![(String::new(), scene.config.collisions.clone())];
    if opts.without_collisions && !scene.config.collisions.is_empty() {
        variants.push(("_nocoll".to_string(), Vec::new()));
    }

    let mut rows = Vec::new();
    for (suffix, primitives) in &variants {
        let mut push = |method: &str, ms: Vec<f64>| {
            let (mean_ms, std_ms) = stats(&ms);
            log::info!("{method}{suffix}: {mean_ms:.3} ± {std_ms:.3} ms");
            rows.push(BenchRow {
                scene: scene.config.name.clone(),
                method: format!("{method}{suffix}"),
                masses,
                mean_ms,
                std_ms,
                frames: ms.len(),
            });
        };
        for (name, method) in [("cg", Method::Cg), ("admm", Method::Admm)] {
            let mut solver = scene.solver_with(finest, method, primitives)?;
            push(name, time_frames(opts, |f| step(&mut solver, f))?);
        }
        let mut solver = scene.solver_with(0, Method::Admm, primitives)?;
        let ms = time_frames(opts, |f| {
            step(&mut solver, f)?;
            let mut x = solver.state.positions.clone();
            for (i, model) in models.iter().enumerate() {
                x = infer_level(model, &scene.hierarchy, i, &x, schedule).map_err(|source| HarnessError::Inference {
                    frame: f,
                    level: i + 1,
                    source,
                })?;
            }
            std::hint::black_box(&x);
            Ok(())
        })?;
        push("hybrid", ms);
    }
    Ok(rows)
}

/// `scene,method,masses,mean_ms,std_ms,frames` with a header line.
pub fn write_bench_csv(rows: &[BenchRow], path: &Path) -> Result<(), HarnessError> {
    let mut out = BufWriter::new(File::create(path).map_err(io_error(path))?);
    let mut text = String::from("scene,method,masses,mean_ms,std_ms,frames\n");
    for r in rows {
        text.push_str(&format!(
            "{},{},{},{:.4},{:.4},{}\n",
            r.scene, r.method, r.masses, r.mean_ms, r.std_ms, r.frames
        ));
    }
    out.write_all(text.as_bytes()).map_err(io_error(path))?;
    out.flush().map_err(io_error(path))
}
