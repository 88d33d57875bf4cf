//! Dataset generation, loss, backpropagation, Adam and training loops for
//! the per-level upsampling networks.

mod adam;
pub mod batch;
mod dataset;
mod train;

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::harness::HarnessError;
use crate::neural::{FeatureVector, MlpModel, NeuralError, OutputVector, FEATURE_DIM};

pub use adam::{adam_step, AdamConfig, AdamState};
pub use dataset::generate_dataset;
pub use train::{sweep_architectures, train, write_loss_csv, LossLog, SweepCurve, SweepReport, TrainOutcome};

pub const DATASET_MAGIC: &[u8; 6] = b"HCSDS1";

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("non-finite loss at epoch {epoch}")]
    NonFinite {
        epoch: usize,
        /// Most recent checkpointed model, if any checkpoint was reached.
        last_good: Option<Box<MlpModel>>,
    },
    #[error("scene {scene} failed while generating data: {source}")]
    Scene {
        scene: String,
        #[source]
        source: Box<HarnessError>,
    },
    #[error("corrupt dataset: {0}")]
    Corrupt(String),
    #[error("dataset truncated: expected {expected} records, found {found}")]
    Truncated { expected: u64, found: u64 },
    #[error(transparent)]
    Model(#[from] NeuralError),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
}

/// One (input feature, ground-truth output) pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainingSample {
    pub input: FeatureVector,
    pub target: OutputVector,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// Finer level the samples target.
    pub level: u32,
    pub samples: Vec<TrainingSample>,
    /// Scene and seed description; not stored in the dataset file.
    pub provenance: String,
}

impl Dataset {
    pub fn new(level: u32, samples: Vec<TrainingSample>) -> Self {
        Self {
            level,
            samples,
            provenance: String::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn refs(&self) -> Vec<&TrainingSample> {
        self.samples.iter().collect()
    }

    /// `HCSDS1`, level (u32), count (u64), then 18 little-endian `f32` per record.
    pub fn write_to<W: Write>(&self, out: &mut W) -> io::Result<()> {
        out.write_all(DATASET_MAGIC)?;
        out.write_all(&self.level.to_le_bytes())?;
        out.write_all(&(self.samples.len() as u64).to_le_bytes())?;
        for s in &self.samples {
            for v in s.input.iter().chain(&s.target) {
                out.write_all(&(*v as f32).to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, TrainError> {
        const HEADER: usize = 6 + 4 + 8;
        const RECORD: usize = 18 * 4;
        if bytes.len() < HEADER {
            return Err(TrainError::Corrupt(format!("{} bytes is shorter than the header", bytes.len())));
        }
        if &bytes[..6] != DATASET_MAGIC {
            return Err(TrainError::Corrupt("bad magic".into()));
        }
        let level = u32::from_le_bytes(bytes[6..10].try_into().unwrap());
        let count = u64::from_le_bytes(bytes[10..18].try_into().unwrap());
        let body = &bytes[HEADER..];
        let found = (body.len() / RECORD) as u64;
        if (body.len() as u64) < count.saturating_mul(RECORD as u64) {
            return Err(TrainError::Truncated { expected: count, found });
        }
        if body.len() as u64 != count * RECORD as u64 {
            return Err(TrainError::Corrupt(format!(
                "header declares {count} records but payload has {} bytes",
                body.len()
            )));
        }
        let samples = body
            .chunks_exact(RECORD)
            .map(|rec| {
                let mut vals = [0.0f64; 18];
                for (v, b) in vals.iter_mut().zip(rec.chunks_exact(4)) {
                    *v = f32::from_le_bytes(b.try_into().unwrap()) as f64;
                }
                let mut s = TrainingSample {
                    input: [0.0; FEATURE_DIM],
                    target: [0.0; FEATURE_DIM],
                };
                s.input.copy_from_slice(&vals[..9]);
                s.target.copy_from_slice(&vals[9..]);
                s
            })
            .collect();
        Ok(Self::new(level, samples))
    }

    pub fn save(&self, path: &Path) -> Result<(), TrainError> {
        let io_err = |source| TrainError::Io {
            path: path.display().to_string(),
            source,
        };
        let mut out = BufWriter::new(File::create(path).map_err(io_err)?);
        self.write_to(&mut out).map_err(io_err)?;
        out.flush().map_err(io_err)
    }

    pub fn load(path: &Path) -> Result<Self, TrainError> {
        let io_err = |source| TrainError::Io {
            path: path.display().to_string(),
            source,
        };
        let mut bytes = Vec::new();
        BufReader::new(File::open(path).map_err(io_err)?)
            .read_to_end(&mut bytes)
            .map_err(io_err)?;
        Self::from_bytes(&bytes)
    }
}

/// `sqrt((1/n) Σ_samples Σ_components (g − o)²)` with `n` the sample count.
pub fn rmse_loss(model: &MlpModel, samples: &[&TrainingSample]) -> f64 {
    assert!(!samples.is_empty(), "loss of an empty batch");
    (batch::squared_error_sum(model, samples) / samples.len() as f64).sqrt()
}

/// Gradient of the mean squared error `(1/n) Σ Σ (g − o)²` (the square of
/// [`rmse_loss`]) with respect to every parameter, in
/// [`MlpModel::flat_params`] order. Also returns that mean squared error.
pub fn backward(model: &MlpModel, samples: &[&TrainingSample], parallel: bool) -> (Vec<f64>, f64) {
    assert!(!samples.is_empty(), "gradient of an empty batch");
    let chunks: Vec<&[&TrainingSample]> = samples.chunks(batch::CHUNK).collect();
    let parts: Vec<(Vec<f64>, f64)> = if parallel {
        chunks.par_iter().map(|c| batch::chunk_gradient_sum(model, c)).collect()
    } else {
        chunks.iter().map(|c| batch::chunk_gradient_sum(model, c)).collect()
    };
    let mut parts = parts.into_iter();
    let (mut grad, mut sq) = parts.next().unwrap();
    for (g, s) in parts {
        for (a, b) in grad.iter_mut().zip(&g) {
            *a += b;
        }
        sq += s;
    }
    let inv = 1.0 / samples.len() as f64;
    for g in &mut grad {
        *g *= inv;
    }
    (grad, sq * inv)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub seed: u64,
    /// Number of weight layers.
    pub depth: usize,
    pub width: usize,
    /// Epochs (1-based) after which the full-dataset loss is logged and a
    /// checkpoint written.
    pub checkpoints: Vec<usize>,
    /// Evaluate gradient chunks on the rayon pool.
    pub parallel: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 500,
            batch_size: 256,
            adam: AdamConfig::default(),
            seed: 0,
            depth: 3,
            width: 32,
            checkpoints: vec![100, 250, 500],
            parallel: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::InvalidConfig(m.into()));
        if self.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        if self.batch_size == 0 {
            return bad("batch size must be at least 1");
        }
        if !(self.adam.learning_rate > 0.0) {
            return bad("learning rate must be positive");
        }
        if !(0.0..1.0).contains(&self.adam.beta1) || !(0.0..1.0).contains(&self.adam.beta2) {
            return bad("Adam betas must lie in [0, 1)");
        }
        if !(self.adam.epsilon > 0.0) {
            return bad("Adam epsilon must be positive");
        }
        if self.depth == 0 || self.width == 0 {
            return bad("depth and width must be positive");
        }
        Ok(())
    }

    pub fn dims(&self) -> Vec<usize> {
        MlpModel::architecture(self.depth, self.width)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_samples(n: usize, rng: &mut ChaCha8Rng) -> Vec<TrainingSample> {
        (0..n)
            .map(|_| TrainingSample {
                input: std::array::from_fn(|_| rng.random_range(-0.05..0.05)),
                target: std::array::from_fn(|_| rng.random_range(-0.05..0.05)),
            })
            .collect()
    }

    #[test]
    fn rmse_convention() {
        let model = MlpModel::zeros(1, &[9, 4, 9]);
        let s = TrainingSample {
            input: [0.0; 9],
            target: [1.0; 9],
        };
        assert_eq!(rmse_loss(&model, &[&s]), 3.0);
        let exact = TrainingSample {
            input: [0.3; 9],
            target: [0.0; 9],
        };
        assert_eq!(rmse_loss(&model, &[&exact, &exact]), 0.0);
    }

    #[test]
    fn rmse_matches_two_pass_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let model = MlpModel::init_random(1, &[9, 16, 16, 9], &mut rng);
        let samples = random_samples(300, &mut rng);
        let refs: Vec<_> = samples.iter().collect();
        let per_sample: Vec<f64> = samples
            .iter()
            .map(|s| {
                let o = model.forward(&s.input);
                o.iter().zip(&s.target).map(|(o, g)| (g - o).powi(2)).sum()
            })
            .collect();
        let oracle = (per_sample.iter().sum::<f64>() / samples.len() as f64).sqrt();
        assert!((rmse_loss(&model, &refs) - oracle).abs() < 1e-12);
    }

    #[test]
    fn zero_error_gives_zero_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let model = MlpModel::init_random(1, &[9, 8, 9], &mut rng);
        let mut samples = random_samples(5, &mut rng);
        let out = batch::predict(&model, &samples.iter().collect::<Vec<_>>());
        for (s, o) in samples.iter_mut().zip(out.chunks_exact(FEATURE_DIM)) {
            s.target.copy_from_slice(o);
        }
        let refs: Vec<_> = samples.iter().collect();
        let (g, loss) = backward(&model, &refs, false);
        assert_eq!(loss, 0.0);
        assert!(g.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn batch_gradient_is_mean_of_sample_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let model = MlpModel::init_random(1, &[9, 8, 8, 9], &mut rng);
        let samples = random_samples(150, &mut rng);
        let refs: Vec<_> = samples.iter().collect();
        let (g, _) = backward(&model, &refs, false);
        let mut mean = vec![0.0; g.len()];
        for s in &samples {
            let (gs, _) = backward(&model, &[s], false);
            for (m, v) in mean.iter_mut().zip(gs) {
                *m += v / samples.len() as f64;
            }
        }
        let scale = g.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        for (a, b) in g.iter().zip(&mean) {
            assert!((a - b).abs() <= 1e-12 * scale.max(1.0));
        }
        let (gp, _) = backward(&model, &refs, true);
        assert_eq!(g, gp);
    }

    #[test]
    fn dataset_file_roundtrip_and_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut samples = random_samples(7, &mut rng);
        for s in &mut samples {
            for v in s.input.iter_mut().chain(s.target.iter_mut()) {
                *v = *v as f32 as f64;
            }
        }
        let ds = Dataset::new(2, samples);
        let mut bytes = Vec::new();
        ds.write_to(&mut bytes).unwrap();
        assert_eq!(bytes.len(), 18 + 7 * 72);
        assert_eq!(Dataset::from_bytes(&bytes).unwrap(), ds);
        assert!(matches!(
            Dataset::from_bytes(&bytes[..bytes.len() - 10]),
            Err(TrainError::Truncated { expected: 7, found: 6 })
        ));
        let mut bad = bytes.clone();
        bad[1] = b'Z';
        assert!(matches!(Dataset::from_bytes(&bad), Err(TrainError::Corrupt(_))));
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let c = TrainConfig {
            epochs: 0,
            ..Default::default()
        };
        assert!(c.validate().is_err());
        let mut c = TrainConfig::default();
        c.adam.beta1 = 1.0;
        assert!(c.validate().is_err());
    }
}
