use rayon::prelude::*;

use crate::harness::{run_conventional_with, Scene, SimConfig};
use crate::neural::{extract_features, FEATURE_DIM};
use crate::solver::Method;

use super::{Dataset, TrainError, TrainingSample};

fn round_f32(v: &mut [f64; FEATURE_DIM]) {
    for x in v {
        *x = *x as f32 as f64;
    }
}

fn scene_samples(
    config: &SimConfig,
    target_level: usize,
    frames: usize,
    seed: u64,
) -> Result<Vec<TrainingSample>, TrainError> {
    let wrap = |source| TrainError::Scene {
        scene: config.name.clone(),
        source: Box::new(source),
    };
    let mut cfg = config.clone();
    cfg.run.seed = seed;
    let scene = Scene::build(&cfg).map_err(wrap)?;
    let finest = scene.finer_levels();
    if target_level == 0 || target_level > finest {
        return Err(TrainError::InvalidConfig(format!(
            "scene {} has finer levels 1..={finest}, cannot target level {target_level}",
            cfg.name
        )));
    }
    let coarse = target_level - 1;
    let coarse_mesh = &scene.hierarchy.levels[coarse];
    let coarse_rest = scene.hierarchy.rest_positions(coarse);
    let fine_rest = scene.hierarchy.rest_positions(target_level);
    let link = &scene.hierarchy.links[coarse];

    let mut samples = Vec::with_capacity(frames * coarse_mesh.triangle_count());
    run_conventional_with(&scene, finest, Method::Admm, frames, |frame| {
        let x = &frame.levels[0];
        for (t, &tri) in coarse_mesh.triangles.iter().enumerate() {
            let mut input = extract_features(tri, x, coarse_rest);
            let mut target = [0.0; FEATURE_DIM];
            for (k, &m) in link.triangle_midpoints[t].iter().enumerate() {
                let d = x[m] - fine_rest[m];
                target[3 * k..3 * k + 3].copy_from_slice(d.as_slice());
            }
            round_f32(&mut input);
            round_f32(&mut target);
            samples.push(TrainingSample { input, target });
        }
        Ok(())
    })
    .map_err(wrap)?;
    Ok(samples)
}

/// Simulates each scene conventionally on its finest level and records, per
/// frame and per triangle of level `target_level - 1`, the corner
/// displacements and the displacements of the triangle's three edge
/// midpoints on `target_level`. Scene `k` is seeded with `seed + k`; scenes
/// run in parallel and merge in scene order.
pub fn generate_dataset(
    scenes: &[SimConfig],
    target_level: usize,
    frames_per_scene: usize,
    seed: u64,
) -> Result<Dataset, TrainError> {
    if scenes.is_empty() {
        return Err(TrainError::InvalidConfig("no scenes given".into()));
    }
    let parts: Vec<Result<Vec<TrainingSample>, TrainError>> = scenes
        .par_iter()
        .enumerate()
        .map(|(k, cfg)| scene_samples(cfg, target_level, frames_per_scene, seed.wrapping_add(k as u64)))
        .collect();
    let mut samples = Vec::new();
    for part in parts {
        samples.extend(part?);
    }
    if samples.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let names: Vec<&str> = scenes.iter().map(|s| s.name.as_str()).collect();
    Ok(Dataset {
        level: target_level as u32,
        samples,
        provenance: format!(
            "scenes [{}], {frames_per_scene} frames each, seed {seed}",
            names.join(", ")
        ),
    })
}
