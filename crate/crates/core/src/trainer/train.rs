use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::neural::{save_model, MlpModel};

use super::{adam_step, backward, rmse_loss, AdamState, Dataset, TrainConfig, TrainError};

/// Full-dataset loss recorded at checkpoint epochs.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LossLog {
    pub entries: Vec<(usize, f64)>,
}

impl LossLog {
    pub fn loss_at(&self, epoch: usize) -> Option<f64> {
        self.entries.iter().find(|(e, _)| *e == epoch).map(|(_, l)| *l)
    }

    pub fn last(&self) -> Option<(usize, f64)> {
        self.entries.last().copied()
    }

    pub fn is_strictly_decreasing(&self) -> bool {
        self.entries.windows(2).all(|w| w[1].1 < w[0].1)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,loss\n");
        for (e, l) in &self.entries {
            writeln!(s, "{e},{l:e}").unwrap();
        }
        s
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: MlpModel,
    pub log: LossLog,
    pub checkpoint_files: Vec<PathBuf>,
}

pub fn write_loss_csv(log: &LossLog, path: &Path) -> Result<(), TrainError> {
    std::fs::write(path, log.to_csv()).map_err(|source| TrainError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Mini-batch Adam on the mean squared error. Samples are reshuffled every
/// epoch with a generator seeded from `cfg.seed`, which also seeds the
/// initial weights. At each checkpoint epoch the full-dataset loss of the
/// `f32`-rounded model is logged and, when `checkpoint_dir` is set, that
/// model is saved there as
/// `model_l{level}_e{epoch:05}.hcsnn`.
pub fn train(dataset: &Dataset, cfg: &TrainConfig, checkpoint_dir: Option<&Path>) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    if let Some(dir) = checkpoint_dir {
        std::fs::create_dir_all(dir).map_err(|source| TrainError::Io {
            path: dir.display().to_string(),
            source,
        })?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = MlpModel::init_random(dataset.level, &cfg.dims(), &mut rng);
    let mut params = model.flat_params();
    let mut adam = AdamState::new(params.len());
    let all = dataset.refs();
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut log = LossLog::default();
    let mut files = Vec::new();
    let mut last_good: Option<Box<MlpModel>> = None;

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            let refs: Vec<_> = batch.iter().map(|&i| all[i]).collect();
            let (grad, mse) = backward(&model, &refs, cfg.parallel);
            if !mse.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(TrainError::NonFinite { epoch, last_good });
            }
            adam_step(&mut params, &grad, &mut adam, &cfg.adam);
            model.set_flat_params(&params);
        }
        if cfg.checkpoints.contains(&epoch) {
            // Logged at storage precision so a reloaded checkpoint reproduces it.
            let stored = model.quantized();
            let loss = rmse_loss(&stored, &all);
            if !loss.is_finite() || !stored.is_finite() {
                return Err(TrainError::NonFinite { epoch, last_good });
            }
            log::info!("level {} epoch {epoch}: loss {loss:.6e}", dataset.level);
            log.entries.push((epoch, loss));
            if let Some(dir) = checkpoint_dir {
                let path = dir.join(format!("model_l{}_e{epoch:05}.hcsnn", dataset.level));
                save_model(&stored, &path)?;
                files.push(path);
            }
            last_good = Some(Box::new(stored));
        }
    }
    Ok(TrainOutcome {
        model,
        log,
        checkpoint_files: files,
    })
}

/// One architecture's training curve, or why it failed.
#[derive(Debug, Clone)]
pub struct SweepCurve {
    /// `"depth"` or `"width"`.
    pub axis: &'static str,
    pub depth: usize,
    pub width: usize,
    pub result: Result<LossLog, String>,
}

impl SweepCurve {
    pub fn label(&self) -> String {
        format!("depth{}_width{}", self.depth, self.width)
    }

    pub fn final_loss(&self) -> Option<f64> {
        self.result.as_ref().ok().and_then(|l| l.last()).map(|(_, l)| l)
    }
}

#[derive(Debug, Clone)]
pub struct SweepReport {
    pub curves: Vec<SweepCurve>,
    pub reference_depth: usize,
    pub reference_width: usize,
}

impl SweepReport {
    fn best(&self, axis: &str) -> Option<&SweepCurve> {
        self.curves
            .iter()
            .filter(|c| c.axis == axis && c.final_loss().is_some())
            .min_by(|a, b| a.final_loss().unwrap().total_cmp(&b.final_loss().unwrap()))
    }

    pub fn best_depth(&self) -> Option<usize> {
        self.best("depth").map(|c| c.depth)
    }

    pub fn best_width(&self) -> Option<usize> {
        self.best("width").map(|c| c.width)
    }

    /// Human-readable summary; flags axes whose best setting differs from
    /// the reference architecture.
    pub fn summary(&self) -> String {
        let mut s = String::from("axis,depth,width,final_loss\n");
        for c in &self.curves {
            match &c.result {
                Ok(_) => writeln!(s, "{},{},{},{:e}", c.axis, c.depth, c.width, c.final_loss().unwrap_or(f64::NAN)),
                Err(e) => writeln!(s, "{},{},{},failed: {e}", c.axis, c.depth, c.width),
            }
            .unwrap();
        }
        for (axis, best, reference) in [
            ("depth", self.best_depth(), self.reference_depth),
            ("width", self.best_width(), self.reference_width),
        ] {
            match best {
                Some(b) if b == reference => writeln!(s, "# best {axis}: {b} (matches reference)"),
                Some(b) => writeln!(s, "# best {axis}: {b} (DEVIATION: reference is {reference})"),
                None => writeln!(s, "# best {axis}: none (all runs failed)"),
            }
            .unwrap();
        }
        s
    }

    /// Writes `sweep_{label}.csv` per curve plus `sweep_summary.csv`.
    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>, TrainError> {
        let io_err = |path: &Path| {
            let path = path.display().to_string();
            move |source| TrainError::Io { path, source }
        };
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
        let mut written = Vec::new();
        for c in &self.curves {
            if let Ok(log) = &c.result {
                let path = dir.join(format!("sweep_{}_{}.csv", c.axis, c.label()));
                std::fs::write(&path, log.to_csv()).map_err(io_err(&path))?;
                written.push(path);
            }
        }
        let path = dir.join("sweep_summary.csv");
        std::fs::write(&path, self.summary()).map_err(io_err(&path))?;
        written.push(path);
        Ok(written)
    }
}

/// Trains one network per depth (at `base.width`) and per width (at
/// `base.depth`) with otherwise identical settings. A failing configuration
/// is recorded and the sweep continues.
pub fn sweep_architectures(dataset: &Dataset, base: &TrainConfig, depths: &[usize], widths: &[usize]) -> SweepReport {
    let runs = depths
        .iter()
        .map(|&d| ("depth", d, base.width))
        .chain(widths.iter().map(|&w| ("width", base.depth, w)));
    let curves = runs
        .map(|(axis, depth, width)| {
            let cfg = TrainConfig {
                depth,
                width,
                ..base.clone()
            };
            let result = train(dataset, &cfg, None).map(|o| o.log).map_err(|e| e.to_string());
            if let Err(e) = &result {
                log::warn!("sweep run depth {depth} width {width} failed: {e}");
            }
            SweepCurve {
                axis,
                depth,
                width,
                result,
            }
        })
        .collect();
    SweepReport {
        curves,
        reference_depth: base.depth,
        reference_width: base.width,
    }
}
