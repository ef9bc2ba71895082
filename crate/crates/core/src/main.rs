//! Command-line front end for the segmentation lab.
//!
//! Exit codes: 0 success, 1 runtime failure (I/O, divergence), 2 usage or
//! configuration error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use modeseg::config::{load_config, ExperimentConfig};
use modeseg::data::{self, SynthConfig};
use modeseg::error::Error;
use modeseg::models::Arch;
use modeseg::norm::NormKind;
use modeseg::objectives::{LossKind, MetricReport};
use modeseg::optim::OptimizerKind;
use modeseg::runner;

#[derive(Parser)]
#[command(
    name = "modeseg",
    version,
    about = "Mode-normalized U-Net/SegNet water segmentation lab"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic bimodal scene: raster (JSON + .f32) and PGM mask.
    Synth {
        #[arg(long, default_value_t = 512)]
        width: usize,
        #[arg(long, default_value_t = 512)]
        height: usize,
        /// Target water fraction in [0, 1].
        #[arg(long, default_value_t = 0.35)]
        coverage: f64,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        /// Output stem: writes <out>.json, <out>.f32, <out>_mask.pgm.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 24.0)]
        blob_scale: f64,
        /// Apply multiplicative speckle with this many looks.
        #[arg(long)]
        speckle_looks: Option<u32>,
        #[arg(long, default_value_t = -20.0)]
        water_mean_db: f64,
        #[arg(long, default_value_t = 2.5)]
        water_std_db: f64,
        #[arg(long, default_value_t = -7.0)]
        land_mean_db: f64,
        #[arg(long, default_value_t = 3.5)]
        land_std_db: f64,
    },
    /// Train one model; writes config.json, record.jsonl, loss_curve.csv,
    /// checkpoint.ckpt into the run directory.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Run directory (default: $MODESEG_RUN_ROOT/train-<seed>-<stamp>).
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Exhaustive 90-point hyperparameter search; writes grid_results.csv.
    Gridsearch {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Parallel independent runs.
        #[arg(long, default_value_t = 1)]
        workers: usize,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// 4-fold zone cross-validation; writes cv_results.csv.
    Crossval {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        workers: usize,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Score a checkpoint on the configured dataset; prints metrics CSV.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Which split to score: train, val, test, or all.
        #[arg(long, default_value = "all")]
        subset: String,
        /// Also write the CSV here.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Tile a raster, run inference, and stitch a binary mask raster.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        raster: PathBuf,
        /// Output mask raster header path (.json).
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 256)]
        tile: usize,
        #[arg(long, default_value_t = 0.5)]
        threshold: f64,
    },
}

/// Config-file overrides shared by the experiment subcommands.
#[derive(Args)]
struct Overrides {
    /// Model architecture: unet or segnet.
    #[arg(long)]
    arch: Option<String>,
    /// Normalization kind: none, batch, or mode.
    #[arg(long)]
    norm: Option<String>,
    /// Mode count K for mode normalization.
    #[arg(long)]
    modes: Option<usize>,
    #[arg(long)]
    depth: Option<usize>,
    #[arg(long)]
    base_channels: Option<usize>,
    #[arg(long)]
    dropout: Option<f64>,
    /// Optimizer: adam or sgd.
    #[arg(long)]
    optimizer: Option<String>,
    #[arg(long)]
    lr: Option<f64>,
    /// Loss: dice, focal, or combined.
    #[arg(long)]
    loss: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    max_epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    /// Tile size cut from the source raster.
    #[arg(long)]
    tile: Option<usize>,
}

impl Overrides {
    fn apply(&self, cfg: &mut ExperimentConfig) -> Result<(), Error> {
        if let Some(arch) = &self.arch {
            cfg.model.arch = match arch.as_str() {
                "unet" => Arch::Unet,
                "segnet" => Arch::Segnet,
                other => return Err(Error::Config(format!("unknown arch {other:?}"))),
            };
        }
        if let Some(norm) = &self.norm {
            cfg.model.norm.kind = match norm.as_str() {
                "none" => NormKind::None,
                "batch" => NormKind::Batch,
                "mode" => NormKind::Mode,
                other => return Err(Error::Config(format!("unknown norm {other:?}"))),
            };
        }
        if let Some(modes) = self.modes {
            cfg.model.norm.modes = modes;
        }
        if let Some(depth) = self.depth {
            cfg.model.depth = depth;
        }
        if let Some(base) = self.base_channels {
            cfg.model.base_channels = base;
        }
        if let Some(dropout) = self.dropout {
            cfg.model.dropout_rate = dropout;
        }
        if let Some(opt) = &self.optimizer {
            cfg.optimizer.kind = match opt.as_str() {
                "adam" => OptimizerKind::Adam,
                "sgd" => OptimizerKind::Sgd,
                other => return Err(Error::Config(format!("unknown optimizer {other:?}"))),
            };
        }
        if let Some(lr) = self.lr {
            cfg.optimizer.learning_rate = lr;
        }
        if let Some(loss) = &self.loss {
            cfg.loss.kind = match loss.as_str() {
                "dice" => LossKind::Dice,
                "focal" => LossKind::Focal,
                "combined" => LossKind::Combined,
                other => return Err(Error::Config(format!("unknown loss {other:?}"))),
            };
        }
        if let Some(seed) = self.seed {
            cfg.seed = seed;
            cfg.train.seed = seed;
        }
        if let Some(v) = self.max_epochs {
            cfg.train.max_epochs = v;
        }
        if let Some(v) = self.batch_size {
            cfg.train.batch_size = v;
        }
        if let Some(v) = self.patience {
            cfg.train.patience = v;
        }
        if let Some(v) = self.tile {
            cfg.data.tile_size = v;
        }
        Ok(())
    }
}

fn resolve_config(path: &Option<PathBuf>, overrides: &Overrides) -> Result<ExperimentConfig, Error> {
    let mut cfg = match path {
        Some(p) => load_config(p)?,
        None => ExperimentConfig::default(),
    };
    overrides.apply(&mut cfg)?;
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Synth {
            width,
            height,
            coverage,
            seed,
            out,
            blob_scale,
            speckle_looks,
            water_mean_db,
            water_std_db,
            land_mean_db,
            land_std_db,
        } => {
            let params = SynthConfig {
                coverage,
                blob_scale,
                speckle_looks,
                water_mean_db,
                water_std_db,
                land_mean_db,
                land_std_db,
            };
            let (raster, mask) = data::synth_scene(width, height, &params, seed)?;
            let stem = out.with_extension("");
            let raster_path = stem.with_extension("json");
            if let Some(parent) = raster_path.parent() {
                if !parent.as_os_str().is_empty() {
                    std::fs::create_dir_all(parent)?;
                }
            }
            data::save_raster(&raster, &raster_path)?;
            let mask_path = stem.with_file_name(format!(
                "{}_mask.pgm",
                stem.file_name().unwrap_or_default().to_string_lossy()
            ));
            data::save_mask_pgm(&mask, &mask_path)?;
            println!("wrote {} and {}", raster_path.display(), mask_path.display());
            Ok(())
        }
        Command::Train {
            config,
            out,
            overrides,
        } => {
            let cfg = resolve_config(&config, &overrides)?;
            let run_dir = out.unwrap_or_else(|| runner::default_run_dir("train", cfg.seed));
            let outcome = runner::run_train(&cfg, &run_dir)?;
            println!(
                "run dir: {} | stopped at epoch {} (best {}) in {:.1}s | best val loss {:.6}",
                run_dir.display(),
                outcome.record.stopped_epoch,
                outcome.record.best_epoch,
                outcome.record.total_seconds,
                outcome.record.best_val_loss,
            );
            if let Some(m) = outcome.test_metrics {
                println!("test dsc {:.4} iou {:.4} accuracy {:.4}", m.dsc, m.iou, m.accuracy);
            }
            Ok(())
        }
        Command::Gridsearch {
            config,
            out,
            workers,
            overrides,
        } => {
            let cfg = resolve_config(&config, &overrides)?;
            let run_dir = out.unwrap_or_else(|| runner::default_run_dir("grid", cfg.seed));
            let result = runner::run_grid_search(&cfg, &run_dir, workers)?;
            match result.selected_point() {
                Some(p) => println!(
                    "selected: optimizer {} lr {} dropout {} loss {} (grid_results.csv in {})",
                    p.optimizer,
                    p.learning_rate,
                    p.dropout,
                    p.loss,
                    run_dir.display()
                ),
                None => println!("no configuration finished successfully"),
            }
            Ok(())
        }
        Command::Crossval {
            config,
            out,
            workers,
            overrides,
        } => {
            let cfg = resolve_config(&config, &overrides)?;
            let run_dir = out.unwrap_or_else(|| runner::default_run_dir("cv", cfg.seed));
            let result = runner::run_cross_validation(&cfg, &run_dir, workers)?;
            for fold in &result.folds {
                match (&fold.test_metrics, &fold.error) {
                    (Some(m), _) => println!("zone {}: dsc {:.4} iou {:.4}", fold.zone, m.dsc, m.iou),
                    (None, Some(e)) => println!("zone {}: failed ({e})", fold.zone),
                    _ => {}
                }
            }
            println!("cv_results.csv in {}", run_dir.display());
            Ok(())
        }
        Command::Evaluate {
            checkpoint,
            config,
            subset,
            out,
            overrides,
        } => {
            let cfg = resolve_config(&config, &overrides)?;
            let metrics = runner::run_evaluate(&checkpoint, &cfg, &subset)?;
            let csv = format!("{}\n{}\n", MetricReport::CSV_HEADER, metrics.csv_row());
            print!("{csv}");
            if let Some(path) = out {
                std::fs::write(path, csv)?;
            }
            Ok(())
        }
        Command::Predict {
            checkpoint,
            raster,
            out,
            tile,
            threshold,
        } => {
            runner::run_predict(&checkpoint, &raster, &out, tile, threshold)?;
            println!("wrote {}", out.display());
            Ok(())
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Json(_) => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
