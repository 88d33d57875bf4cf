//! Per-triangle neural upsampling of one hierarchy level to the next.
//!
//! For each level-`i` triangle `(p, q, r)` the network maps the corner
//! displacements from rest to the displacements of the three level-`i+1`
//! midpoints `(m_pq, m_qr, m_rp)`. A midpoint shared by two triangles takes
//! the mean of both predictions.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use rayon::ThreadPool;
use thiserror::Error;

use crate::hierarchy::{ClothHierarchy, LevelLink};
use crate::Vec3;

pub const FEATURE_DIM: usize = 9;
pub const MODEL_MAGIC: &[u8; 6] = b"HCSNN1";

/// Corner displacements `[x_p − x̂_p, x_q − x̂_q, x_r − x̂_r]`.
pub type FeatureVector = [f64; FEATURE_DIM];
/// Midpoint displacements `[m_pq, m_qr, m_rp]` from their rest positions.
pub type OutputVector = [f64; FEATURE_DIM];

#[derive(Debug, Error)]
pub enum NeuralError {
    #[error("model targets level {model}, expected level {expected}")]
    WrongLevel { model: u32, expected: usize },
    #[error("model maps {inputs} -> {outputs}, per-triangle inference needs 9 -> 9")]
    WrongShape { inputs: usize, outputs: usize },
    #[error("non-finite network output for triangle {0}")]
    NonFinite(usize),
    #[error("fine vertex {0} received no prediction")]
    Uncovered(usize),
    #[error("expected {expected} output vectors, got {got}")]
    OutputCount { expected: usize, got: usize },
    #[error("hierarchy has no level {0} to infer")]
    NoSuchLevel(usize),
    #[error("corrupt model header: {0}")]
    CorruptHeader(String),
    #[error("model file truncated: needed {needed} more bytes")]
    Truncated { needed: usize },
    #[error("model dimensions do not match payload: {0}")]
    DimensionMismatch(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
}

/// Fully connected layer `y = W x + b` with `W` stored row-major
/// (`outputs` rows by `inputs` columns).
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

impl Dense {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            biases: vec![0.0; outputs],
        }
    }

    fn apply(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for (row, b) in self.weights.chunks_exact(self.inputs).zip(&self.biases) {
            let mut acc = *b;
            for (w, xi) in row.iter().zip(x) {
                acc += w * xi;
            }
            out.push(acc);
        }
    }
}

/// Multilayer perceptron with ReLU after every layer except the last.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    /// The finer level this model produces.
    pub level_index: u32,
    pub layers: Vec<Dense>,
}

impl MlpModel {
    /// All-zero model with layer widths `dims` (input first, output last).
    pub fn zeros(level_index: u32, dims: &[usize]) -> Self {
        assert!(dims.len() >= 2, "a model needs at least an input and an output width");
        Self {
            level_index,
            layers: dims.windows(2).map(|w| Dense::zeros(w[0], w[1])).collect(),
        }
    }

    /// `depth` weight layers: `9 → width × (depth − 1) → 9`.
    pub fn architecture(depth: usize, width: usize) -> Vec<usize> {
        assert!(depth >= 1, "depth counts weight layers and must be at least 1");
        let mut dims = vec![FEATURE_DIM];
        dims.extend(std::iter::repeat_n(width, depth - 1));
        dims.push(FEATURE_DIM);
        dims
    }

    /// Uniform `±√(6/(fan_in+fan_out))` weights, zero biases. Values are drawn
    /// as `f32` so the model is exactly representable in a checkpoint.
    pub fn init_random<R: Rng + ?Sized>(level_index: u32, dims: &[usize], rng: &mut R) -> Self {
        let mut model = Self::zeros(level_index, dims);
        for layer in &mut model.layers {
            let limit = (6.0 / (layer.inputs + layer.outputs) as f64).sqrt() as f32;
            for w in &mut layer.weights {
                *w = rng.random_range(-limit..limit) as f64;
            }
        }
        model
    }

    /// [`MlpModel::init_random`] driven by a ChaCha8 generator seeded with `seed`.
    pub fn init_seeded(level_index: u32, dims: &[usize], seed: u64) -> Self {
        Self::init_random(level_index, dims, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn dims(&self) -> Vec<usize> {
        let mut dims = vec![self.layers[0].inputs];
        dims.extend(self.layers.iter().map(|l| l.outputs));
        dims
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().outputs
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.biases.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(&l.biases).all(|v| v.is_finite()))
    }

    /// All parameters, per layer weights then biases.
    pub fn flat_params(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.biases).copied())
            .collect()
    }

    /// Inverse of [`MlpModel::flat_params`].
    pub fn set_flat_params(&mut self, params: &[f64]) {
        assert_eq!(params.len(), self.param_count(), "parameter count mismatch");
        let mut it = params.iter();
        for l in &mut self.layers {
            for v in l.weights.iter_mut().chain(l.biases.iter_mut()) {
                *v = *it.next().unwrap();
            }
        }
    }

    /// Rounds every parameter to the nearest `f32` (the checkpoint precision).
    pub fn quantized(&self) -> Self {
        let mut out = self.clone();
        for l in &mut out.layers {
            for v in l.weights.iter_mut().chain(l.biases.iter_mut()) {
                *v = *v as f32 as f64;
            }
        }
        out
    }

    /// Forward pass. Panics if `input` does not match the input width.
    pub fn forward(&self, input: &[f64]) -> Vec<f64> {
        assert_eq!(input.len(), self.input_dim(), "input width mismatch");
        let mut cur = input.to_vec();
        let mut next = Vec::new();
        let last = self.layers.len() - 1;
        for (k, layer) in self.layers.iter().enumerate() {
            layer.apply(&cur, &mut next);
            if k != last {
                for v in &mut next {
                    *v = v.max(0.0);
                }
            }
            std::mem::swap(&mut cur, &mut next);
        }
        cur
    }

    pub fn forward9(&self, input: &FeatureVector) -> OutputVector {
        let out = self.forward(input);
        let mut o = [0.0; FEATURE_DIM];
        o.copy_from_slice(&out);
        o
    }
}

/// Corner displacements of `tri` in its stored vertex order.
pub fn extract_features(tri: [usize; 3], positions: &[Vec3], rest: &[Vec3]) -> FeatureVector {
    let mut f = [0.0; FEATURE_DIM];
    for (k, &v) in tri.iter().enumerate() {
        let d = positions[v] - rest[v];
        f[3 * k..3 * k + 3].copy_from_slice(d.as_slice());
    }
    f
}

/// Positions of level `i + 1` from per-triangle outputs of level `i`.
///
/// Coarse vertices copy `coarse_positions`; each midpoint sits at its rest
/// position plus its single prediction, or plus `(c₁ + c₂) / 2` when two
/// triangles predict it (lower triangle index first).
pub fn apply_outputs(
    link: &LevelLink,
    coarse_positions: &[Vec3],
    fine_rest: &[Vec3],
    outputs: &[OutputVector],
) -> Result<Vec<Vec3>, NeuralError> {
    if outputs.len() != link.triangle_midpoints.len() {
        return Err(NeuralError::OutputCount {
            expected: link.triangle_midpoints.len(),
            got: outputs.len(),
        });
    }
    let slot = |(t, s): (usize, usize)| Vec3::new(outputs[t][3 * s], outputs[t][3 * s + 1], outputs[t][3 * s + 2]);
    let mut fine = Vec::with_capacity(fine_rest.len());
    fine.extend_from_slice(coarse_positions);
    for (e, contributors) in link.contributors.iter().enumerate() {
        let m = link.edge_midpoints[e];
        let displacement = match *contributors {
            [Some(a), Some(b)] => (slot(a) + slot(b)) * 0.5,
            [Some(a), None] => slot(a),
            _ => return Err(NeuralError::Uncovered(m)),
        };
        debug_assert_eq!(fine.len(), m);
        fine.push(fine_rest[m] + displacement);
    }
    Ok(fine)
}

/// How per-triangle inference is scheduled.
#[derive(Clone, Copy)]
pub enum Schedule<'a> {
    Sequential,
    Pool(&'a ThreadPool),
}

/// Positions of level `coarse_level + 1` inferred from level `coarse_level`.
pub fn infer_level(
    model: &MlpModel,
    hierarchy: &ClothHierarchy,
    coarse_level: usize,
    positions: &[Vec3],
    schedule: Schedule<'_>,
) -> Result<Vec<Vec3>, NeuralError> {
    if coarse_level + 1 >= hierarchy.levels.len() {
        return Err(NeuralError::NoSuchLevel(coarse_level + 1));
    }
    if model.level_index as usize != coarse_level + 1 {
        return Err(NeuralError::WrongLevel {
            model: model.level_index,
            expected: coarse_level + 1,
        });
    }
    if model.input_dim() != FEATURE_DIM || model.output_dim() != FEATURE_DIM {
        return Err(NeuralError::WrongShape {
            inputs: model.input_dim(),
            outputs: model.output_dim(),
        });
    }
    let mesh = &hierarchy.levels[coarse_level];
    let rest = hierarchy.rest_positions(coarse_level);
    let run = |&tri: &[usize; 3]| model.forward9(&extract_features(tri, positions, rest));
    let outputs: Vec<OutputVector> = match schedule {
        Schedule::Sequential => mesh.triangles.iter().map(run).collect(),
        Schedule::Pool(pool) => pool.install(|| mesh.triangles.par_iter().map(run).collect()),
    };
    if let Some(t) = outputs.iter().position(|o| o.iter().any(|v| !v.is_finite())) {
        return Err(NeuralError::NonFinite(t));
    }
    apply_outputs(
        &hierarchy.links[coarse_level],
        positions,
        hierarchy.rest_positions(coarse_level + 1),
        &outputs,
    )
}

/// Serializes `model` in the `HCSNN1` checkpoint format with `f32` parameters.
pub fn write_model<W: Write>(model: &MlpModel, out: &mut W) -> io::Result<()> {
    out.write_all(MODEL_MAGIC)?;
    out.write_all(&model.level_index.to_le_bytes())?;
    out.write_all(&(model.layers.len() as u32).to_le_bytes())?;
    for l in &model.layers {
        out.write_all(&(l.outputs as u32).to_le_bytes())?;
        out.write_all(&(l.inputs as u32).to_le_bytes())?;
    }
    for l in &model.layers {
        for v in l.weights.iter().chain(&l.biases) {
            out.write_all(&(*v as f32).to_le_bytes())?;
        }
    }
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8], NeuralError> {
        if self.pos + n > self.bytes.len() {
            return Err(NeuralError::Truncated {
                needed: self.pos + n - self.bytes.len(),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, NeuralError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f32(&mut self) -> Result<f32, NeuralError> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

/// Largest accepted layer width; guards against allocating from a corrupt header.
const MAX_WIDTH: u32 = 1 << 16;

pub fn read_model_bytes(bytes: &[u8]) -> Result<MlpModel, NeuralError> {
    let mut cur = Cursor { bytes, pos: 0 };
    let magic = cur.take(MODEL_MAGIC.len())?;
    if magic != MODEL_MAGIC {
        return Err(NeuralError::CorruptHeader(format!("bad magic {magic:?}")));
    }
    let level_index = cur.u32()?;
    let layer_count = cur.u32()?;
    if layer_count == 0 || layer_count > 64 {
        return Err(NeuralError::CorruptHeader(format!("implausible layer count {layer_count}")));
    }
    let mut shapes = Vec::with_capacity(layer_count as usize);
    for _ in 0..layer_count {
        let rows = cur.u32()?;
        let cols = cur.u32()?;
        if rows == 0 || cols == 0 || rows > MAX_WIDTH || cols > MAX_WIDTH {
            return Err(NeuralError::CorruptHeader(format!("implausible layer shape {rows}x{cols}")));
        }
        shapes.push((rows as usize, cols as usize));
    }
    for (k, w) in shapes.windows(2).enumerate() {
        if w[0].0 != w[1].1 {
            return Err(NeuralError::DimensionMismatch(format!(
                "layer {k} outputs {} but layer {} takes {}",
                w[0].0,
                k + 1,
                w[1].1
            )));
        }
    }
    let mut layers = Vec::with_capacity(shapes.len());
    for &(rows, cols) in &shapes {
        let mut layer = Dense::zeros(cols, rows);
        for v in layer.weights.iter_mut().chain(layer.biases.iter_mut()) {
            *v = cur.f32()? as f64;
        }
        layers.push(layer);
    }
    if cur.pos != bytes.len() {
        return Err(NeuralError::DimensionMismatch(format!(
            "{} trailing bytes after the declared parameters",
            bytes.len() - cur.pos
        )));
    }
    Ok(MlpModel { level_index, layers })
}

pub fn save_model(model: &MlpModel, path: &Path) -> Result<(), NeuralError> {
    let io_err = |source| NeuralError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut out = BufWriter::new(File::create(path).map_err(io_err)?);
    write_model(model, &mut out).map_err(io_err)?;
    out.flush().map_err(io_err)
}

pub fn load_model(path: &Path) -> Result<MlpModel, NeuralError> {
    let io_err = |source| NeuralError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut bytes = Vec::new();
    BufReader::new(File::open(path).map_err(io_err)?)
        .read_to_end(&mut bytes)
        .map_err(io_err)?;
    read_model_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hierarchy::{build_grid_mesh, build_hierarchy};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn features() {
        let rest = vec![Vec3::zeros(), Vec3::x(), Vec3::y()];
        assert_eq!(extract_features([0, 1, 2], &rest, &rest), [0.0; 9]);
        let shifted: Vec<_> = rest.iter().map(|p| p + Vec3::new(1.0, 2.0, 3.0)).collect();
        let f = extract_features([0, 1, 2], &shifted, &rest);
        for k in 0..3 {
            assert!((f[3 * k] - 1.0).abs() < 1e-15);
            assert!((f[3 * k + 1] - 2.0).abs() < 1e-15);
            assert!((f[3 * k + 2] - 3.0).abs() < 1e-15);
        }
        let mut moved = rest.clone();
        moved[0].x += 0.1;
        let f = extract_features([0, 1, 2], &moved, &rest);
        assert_eq!(f, [0.1, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn forward_toy_models() {
        let zero = MlpModel::zeros(1, &[9, 32, 32, 9]);
        assert_eq!(zero.forward9(&[0.7; 9]), [0.0; 9]);
        let mut lin = MlpModel::zeros(0, &[1, 1]);
        lin.layers[0].weights[0] = 2.0;
        lin.layers[0].biases[0] = 1.0;
        assert_eq!(lin.forward(&[3.0]), vec![7.0]);
    }

    #[test]
    fn architecture_dims() {
        assert_eq!(MlpModel::architecture(3, 32), vec![9, 32, 32, 9]);
        assert_eq!(MlpModel::architecture(2, 16), vec![9, 16, 9]);
        let m = MlpModel::init_random(1, &MlpModel::architecture(3, 32), &mut ChaCha8Rng::seed_from_u64(1));
        assert_eq!(m.param_count(), 9 * 32 + 32 + 32 * 32 + 32 + 32 * 9 + 9);
        assert_eq!(m, m.quantized());
    }

    #[test]
    fn overlap_averaging() {
        let h = build_hierarchy(build_grid_mesh(1, 1, 1.0, 1.0).unwrap(), 1).unwrap();
        let link = &h.links[0];
        // The diagonal is the only shared edge.
        let (e, c) = link
            .contributors
            .iter()
            .enumerate()
            .find(|(_, c)| c[1].is_some())
            .unwrap();
        let (a, b) = (c[0].unwrap(), c[1].unwrap());
        let mut outputs = vec![[0.0; 9]; 2];
        outputs[a.0][3 * a.1] = 0.1;
        outputs[b.0][3 * b.1] = 0.3;
        let coarse = h.rest_positions(0).to_vec();
        let fine = apply_outputs(link, &coarse, h.rest_positions(1), &outputs).unwrap();
        let m = link.edge_midpoints[e];
        let rest = h.rest_positions(1)[m];
        assert_eq!(fine[m], rest + Vec3::new((0.1 + 0.3) * 0.5, 0.0, 0.0));
        assert!((fine[m].x - rest.x - 0.2).abs() < 1e-15);

        // Boundary midpoint keeps its single contribution.
        let (e, c) = link
            .contributors
            .iter()
            .enumerate()
            .find(|(_, c)| c[1].is_none())
            .unwrap();
        let (t, s) = c[0].unwrap();
        let mut outputs = vec![[0.0; 9]; 2];
        outputs[t][3 * s + 2] = -0.25;
        let fine = apply_outputs(link, &coarse, h.rest_positions(1), &outputs).unwrap();
        let m = link.edge_midpoints[e];
        assert_eq!(fine[m], h.rest_positions(1)[m] + Vec3::new(0.0, 0.0, -0.25));

        let zeros = apply_outputs(link, &coarse, h.rest_positions(1), &[[0.0; 9]; 2]).unwrap();
        assert_eq!(zeros, h.rest_positions(1));
        assert!(apply_outputs(link, &coarse, h.rest_positions(1), &[[0.0; 9]]).is_err());
    }

    #[test]
    fn infer_level_checks_model() {
        let h = build_hierarchy(build_grid_mesh(2, 2, 1.0, 1.0).unwrap(), 1).unwrap();
        let x = h.rest_positions(0).to_vec();
        let wrong_level = MlpModel::zeros(2, &[9, 4, 9]);
        assert!(matches!(
            infer_level(&wrong_level, &h, 0, &x, Schedule::Sequential),
            Err(NeuralError::WrongLevel { .. })
        ));
        let wrong_shape = MlpModel::zeros(1, &[9, 4, 3]);
        assert!(matches!(
            infer_level(&wrong_shape, &h, 0, &x, Schedule::Sequential),
            Err(NeuralError::WrongShape { .. })
        ));
        let mut nan = MlpModel::zeros(1, &[9, 9]);
        nan.layers[0].biases[4] = f64::NAN;
        assert!(matches!(
            infer_level(&nan, &h, 0, &x, Schedule::Sequential),
            Err(NeuralError::NonFinite(0))
        ));
        assert!(matches!(
            infer_level(&MlpModel::zeros(2, &[9, 9]), &h, 1, &x, Schedule::Sequential),
            Err(NeuralError::NoSuchLevel(2))
        ));
    }

    #[test]
    fn checkpoint_errors_are_distinct() {
        let m = MlpModel::init_random(2, &[9, 5, 9], &mut ChaCha8Rng::seed_from_u64(3));
        let mut bytes = Vec::new();
        write_model(&m, &mut bytes).unwrap();
        assert_eq!(read_model_bytes(&bytes).unwrap(), m);

        let truncated = &bytes[..bytes.len() - 3];
        assert!(matches!(read_model_bytes(truncated), Err(NeuralError::Truncated { .. })));

        let mut bad_magic = bytes.clone();
        bad_magic[0] = b'X';
        assert!(matches!(read_model_bytes(&bad_magic), Err(NeuralError::CorruptHeader(_))));

        let mut trailing = bytes.clone();
        trailing.extend_from_slice(&[0; 4]);
        assert!(matches!(read_model_bytes(&trailing), Err(NeuralError::DimensionMismatch(_))));

        // Second layer claims 4 input columns while the first emits 5.
        let mut broken_chain = bytes.clone();
        broken_chain[6 + 4 + 4 + 8 + 4..6 + 4 + 4 + 8 + 8].copy_from_slice(&4u32.to_le_bytes());
        assert!(matches!(read_model_bytes(&broken_chain), Err(NeuralError::DimensionMismatch(_))));
    }
}
