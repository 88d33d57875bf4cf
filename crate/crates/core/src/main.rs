use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use hcloth::harness::{
    bench_scene, load_models, simulate, write_bench_csv, BenchOptions, Preset, RunMethod, Scene, SimConfig,
};
use hcloth::hierarchy::{build_grid_mesh, build_hierarchy};
use hcloth::neural::{save_model, MlpModel};
use hcloth::trainer::{generate_dataset, sweep_architectures, train, write_loss_csv, Dataset, TrainConfig};

#[derive(Parser)]
#[command(name = "hcloth", version, about = "Hierarchical cloth simulation with neural upsampling")]
struct Cli {
    /// Log level filter (error, warn, info, debug, trace).
    #[arg(long, global = true, default_value = "info")]
    log: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a grid hierarchy and dump each level as OBJ.
    Mesh {
        #[arg(long, default_value_t = 18)]
        nx: usize,
        #[arg(long, default_value_t = 12)]
        ny: usize,
        #[arg(long, default_value_t = 1.8)]
        width: f64,
        #[arg(long, default_value_t = 1.2)]
        height: f64,
        #[arg(long, default_value_t = 2)]
        levels: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a scene and export OBJ frames.
    Simulate {
        #[command(flatten)]
        scene: SceneArgs,
        #[arg(long, value_enum)]
        method: Option<CliMethod>,
        #[arg(long)]
        frames: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Level simulated by conventional methods (default: finest).
        #[arg(long)]
        level: Option<usize>,
        #[arg(long)]
        workers: Option<usize>,
        /// Model files for hybrid runs, one per finer level in order.
        #[arg(long, num_args = 1..)]
        models: Vec<PathBuf>,
    },
    /// Generate a training dataset for one finer level.
    Sample {
        /// Scene presets to simulate.
        #[arg(long, value_enum, num_args = 1.., default_values_t = Preset::ALL)]
        presets: Vec<Preset>,
        /// Extra scene config files.
        #[arg(long, num_args = 1..)]
        configs: Vec<PathBuf>,
        #[arg(long, default_value_t = 1)]
        level: usize,
        #[arg(long, default_value_t = 300)]
        frames: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one level's network on a dataset.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        train: TrainArgs,
        /// Directory for checkpoints, the final model and the loss CSV.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train several depths and widths and compare their losses.
    Sweep {
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        train: TrainArgs,
        #[arg(long, num_args = 1.., default_values_t = [2, 3, 4, 5])]
        depths: Vec<usize>,
        #[arg(long, num_args = 1.., default_values_t = [16, 32, 64, 128])]
        widths: Vec<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Time CG, ADMM and the hybrid pipeline per frame.
    Bench {
        #[arg(long, value_enum, num_args = 1.., default_values_t = [Preset::Flag])]
        presets: Vec<Preset>,
        #[arg(long, num_args = 1..)]
        configs: Vec<PathBuf>,
        /// Model files, one per finer level; random networks of the default
        /// shape are timed when omitted.
        #[arg(long, num_args = 1..)]
        models: Vec<PathBuf>,
        #[arg(long, default_value_t = 100)]
        frames: usize,
        #[arg(long, default_value_t = 10)]
        warmup: usize,
        #[arg(long, default_value_t = 1)]
        workers: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct SceneArgs {
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    preset: Option<Preset>,
}

impl SceneArgs {
    fn load(&self) -> Result<SimConfig> {
        match (&self.config, self.preset) {
            (Some(path), _) => SimConfig::load(path).with_context(|| format!("loading {}", path.display())),
            (None, Some(p)) => Ok(p.config()),
            (None, None) => Ok(Preset::Flag.config()),
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum CliMethod {
    Admm,
    Cg,
    Hybrid,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long, default_value_t = 500)]
    epochs: usize,
    #[arg(long, default_value_t = 256)]
    batch_size: usize,
    #[arg(long, default_value_t = 3)]
    depth: usize,
    #[arg(long, default_value_t = 32)]
    width: usize,
    #[arg(long, default_value_t = 1e-3)]
    learning_rate: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Epochs at which the loss is logged and a checkpoint saved
    /// (default: the final epoch).
    #[arg(long, num_args = 1..)]
    checkpoints: Vec<usize>,
    #[arg(long)]
    parallel: bool,
}

impl TrainArgs {
    fn config(&self) -> TrainConfig {
        let mut cfg = TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            depth: self.depth,
            width: self.width,
            seed: self.seed,
            checkpoints: if self.checkpoints.is_empty() {
                vec![self.epochs]
            } else {
                self.checkpoints.clone()
            },
            parallel: self.parallel,
            ..TrainConfig::default()
        };
        cfg.adam.learning_rate = self.learning_rate;
        cfg
    }
}

fn scene_configs(presets: &[Preset], paths: &[PathBuf]) -> Result<Vec<SimConfig>> {
    let mut out: Vec<SimConfig> = presets.iter().map(|p| p.config()).collect();
    for p in paths {
        out.push(SimConfig::load(p).with_context(|| format!("loading {}", p.display()))?);
    }
    Ok(out)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Mesh {
            nx,
            ny,
            width,
            height,
            levels,
            out,
        } => {
            let h = build_hierarchy(build_grid_mesh(nx, ny, width, height)?, levels)?;
            h.dump_obj(&out)?;
            for (i, l) in h.levels.iter().enumerate() {
                println!(
                    "level {i}: {} vertices, {} edges, {} triangles",
                    l.vertex_count(),
                    l.edge_count(),
                    l.triangle_count()
                );
            }
        }
        Command::Simulate {
            scene,
            method,
            frames,
            out,
            seed,
            level,
            workers,
            models,
        } => {
            let mut cfg = scene.load()?;
            if let Some(m) = method {
                cfg.run.method = match m {
                    CliMethod::Admm => RunMethod::Admm,
                    CliMethod::Cg => RunMethod::Cg,
                    CliMethod::Hybrid => RunMethod::Hybrid,
                };
            }
            if let Some(f) = frames {
                cfg.run.frames = f;
            }
            if out.is_some() {
                cfg.run.output = out;
            }
            if let Some(s) = seed {
                cfg.run.seed = s;
            }
            if let Some(w) = workers {
                cfg.run.workers = w;
            }
            if !models.is_empty() {
                cfg.models = models;
            }
            cfg.validate()?;
            if cfg.run.method == RunMethod::Hybrid && cfg.models.len() != cfg.scene.finer_levels {
                bail!(
                    "hybrid run needs {} model files, got {}",
                    cfg.scene.finer_levels,
                    cfg.models.len()
                );
            }
            let summary = simulate(&cfg, level, None)?;
            println!(
                "{} frames, level {} ({} masses), {:.3} ms/frame, {} files written",
                summary.frames, summary.finest_level, summary.masses, summary.mean_ms, summary.files
            );
        }
        Command::Sample {
            presets,
            configs,
            level,
            frames,
            seed,
            out,
        } => {
            let scenes = scene_configs(&presets, &configs)?;
            let ds = generate_dataset(&scenes, level, frames, seed)?;
            ds.save(&out)?;
            println!("{} samples for level {} ({})", ds.len(), ds.level, ds.provenance);
        }
        Command::Train { data, train: args, out } => {
            let ds = Dataset::load(&data)?;
            let cfg = args.config();
            let outcome = train(&ds, &cfg, Some(&out))?;
            let model_path = out.join(format!("model_l{}.hcsnn", ds.level));
            save_model(&outcome.model, &model_path)?;
            write_loss_csv(&outcome.log, &out.join(format!("loss_l{}.csv", ds.level)))?;
            for (e, l) in &outcome.log.entries {
                println!("epoch {e}: loss {l:e}");
            }
            println!("model written to {}", model_path.display());
        }
        Command::Sweep {
            data,
            train: args,
            depths,
            widths,
            out,
        } => {
            let ds = Dataset::load(&data)?;
            let report = sweep_architectures(&ds, &args.config(), &depths, &widths);
            report.write(&out)?;
            print!("{}", report.summary());
        }
        Command::Bench {
            presets,
            configs,
            models,
            frames,
            warmup,
            workers,
            out,
        } => {
            let opts = BenchOptions {
                frames,
                warmup,
                workers,
                ..Default::default()
            };
            let loaded = load_models(&models)?;
            let mut rows = Vec::new();
            for cfg in scene_configs(&presets, &configs)? {
                let scene = Scene::build(&cfg)?;
                let nets = if loaded.is_empty() {
                    log::warn!("no models given; timing randomly initialized networks");
                    let mut rng = ChaCha8Rng::seed_from_u64(0);
                    let dims = TrainConfig::default().dims();
                    (1..=scene.finer_levels())
                        .map(|l| MlpModel::init_random(l as u32, &dims, &mut rng))
                        .collect()
                } else {
                    loaded.clone()
                };
                rows.extend(bench_scene(&scene, &nets, &opts)?);
            }
            write_bench_csv(&rows, &out)?;
            for r in &rows {
                println!(
                    "{:<8} {:<14} {:>6} masses {:>9.3} ms ± {:.3}",
                    r.scene, r.method, r.masses, r.mean_ms, r.std_ms
                );
            }
        }
    }
    Ok(())
}

fn main() {
    let cli = Cli::parse();
    env_logger::Builder::new().parse_filters(&cli.log).init();
    if let Err(e) = run(cli) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
