//! End-to-end experiment entry points shared by the CLI and the C bindings:
//! each one resolves a config, runs the work, and writes the run-directory
//! artifacts (echoed config, per-epoch JSONL, loss curve CSV, checkpoint,
//! result tables).

use std::path::{Path, PathBuf};

use crate::checkpoint;
use crate::config::{prepare_tiles, ExperimentConfig};
use crate::data::{self, StandardizationStats};
use crate::error::{Error, Result};
use crate::experiments::{self, CvResult, GridResult};
use crate::models::Model;
use crate::objectives::MetricReport;
use crate::trainer::{self, RunRecord};

pub const RUN_ROOT_ENV: &str = "MODESEG_RUN_ROOT";

/// `$MODESEG_RUN_ROOT` (default `runs`) joined with a command-specific id.
pub fn default_run_dir(command: &str, seed: u64) -> PathBuf {
    let root = std::env::var(RUN_ROOT_ENV).unwrap_or_else(|_| "runs".into());
    let stamp = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    Path::new(&root).join(format!("{command}-{seed}-{stamp}"))
}

pub struct TrainOutcome {
    pub record: RunRecord,
    pub test_metrics: Option<MetricReport>,
    pub standardization: StandardizationStats,
    pub checkpoint_path: PathBuf,
}

/// Train one model per the config and write the four run artifacts:
/// `config.json`, `record.jsonl`, `loss_curve.csv`, `checkpoint.ckpt`.
pub fn run_train(cfg: &ExperimentConfig, run_dir: &Path) -> Result<TrainOutcome> {
    cfg.validate()?;
    std::fs::create_dir_all(run_dir)?;
    std::fs::write(run_dir.join("config.json"), cfg.to_pretty_json())?;

    let mut tiles = prepare_tiles(&cfg.data)?;
    let plan = data::stratified_split(&tiles, cfg.data.split_fractions, cfg.data.split_seed)?;
    let stats = data::standardize(&mut tiles, &plan.train)?;
    std::fs::write(
        run_dir.join("split.json"),
        serde_json::to_string_pretty(&plan)?,
    )?;

    let mut model = Model::<f32>::build(&cfg.model, cfg.seed)?;
    let result = trainer::train(
        &mut model,
        &tiles,
        &plan.train,
        &plan.val,
        &cfg.train,
        &cfg.optimizer,
        &cfg.loss,
    );
    let record = match result {
        Ok(record) => record,
        Err(Error::Diverged { epoch, record }) => {
            // Preserve the partial log before surfacing the fault.
            std::fs::write(run_dir.join("record.jsonl"), record.to_jsonl())?;
            std::fs::write(run_dir.join("loss_curve.csv"), record.to_loss_curve_csv())?;
            return Err(Error::Diverged { epoch, record });
        }
        Err(e) => return Err(e),
    };

    std::fs::write(run_dir.join("record.jsonl"), record.to_jsonl())?;
    std::fs::write(run_dir.join("loss_curve.csv"), record.to_loss_curve_csv())?;
    let checkpoint_path = run_dir.join("checkpoint.ckpt");
    checkpoint::save_checkpoint(&mut model, Some(stats), &checkpoint_path)?;

    let test_metrics = if plan.test.is_empty() {
        None
    } else {
        let (_, metrics) =
            trainer::evaluate(&model, &tiles, &plan.test, &cfg.loss, cfg.train.batch_size)?;
        std::fs::write(
            run_dir.join("test_metrics.csv"),
            format!("{}\n{}\n", MetricReport::CSV_HEADER, metrics.csv_row()),
        )?;
        Some(metrics)
    };

    Ok(TrainOutcome {
        record,
        test_metrics,
        standardization: stats,
        checkpoint_path,
    })
}

/// Exhaustive grid search; writes `config.json` and `grid_results.csv`.
pub fn run_grid_search(
    cfg: &ExperimentConfig,
    run_dir: &Path,
    workers: usize,
) -> Result<GridResult> {
    cfg.validate()?;
    std::fs::create_dir_all(run_dir)?;
    std::fs::write(run_dir.join("config.json"), cfg.to_pretty_json())?;

    let mut tiles = prepare_tiles(&cfg.data)?;
    let plan = data::stratified_split(&tiles, cfg.data.split_fractions, cfg.data.split_seed)?;
    data::standardize(&mut tiles, &plan.train)?;

    let result = experiments::grid_search::<f32>(&cfg.model, &tiles, &plan, &cfg.train, workers)?;
    std::fs::write(run_dir.join("grid_results.csv"), result.to_csv())?;
    Ok(result)
}

/// Zone cross-validation; writes `config.json` and `cv_results.csv`.
pub fn run_cross_validation(
    cfg: &ExperimentConfig,
    run_dir: &Path,
    workers: usize,
) -> Result<CvResult> {
    cfg.validate()?;
    std::fs::create_dir_all(run_dir)?;
    std::fs::write(run_dir.join("config.json"), cfg.to_pretty_json())?;

    let tiles = prepare_tiles(&cfg.data)?;
    let result = experiments::cross_validate::<f32>(
        &cfg.model,
        &tiles,
        &cfg.train,
        &cfg.optimizer,
        &cfg.loss,
        0.125,
        workers,
    )?;
    let label = format!(
        "{}-{}",
        cfg.model.arch,
        cfg.model.norm.kind
    );
    std::fs::write(run_dir.join("cv_results.csv"), result.to_csv(&label))?;
    Ok(result)
}

/// Score a checkpoint on the configured dataset subset.
pub fn run_evaluate(
    checkpoint_path: &Path,
    cfg: &ExperimentConfig,
    subset: &str,
) -> Result<MetricReport> {
    let (model, stats) = checkpoint::load_checkpoint::<f32>(checkpoint_path)?;
    let mut tiles = prepare_tiles(&cfg.data)?;
    if let Some(stats) = &stats {
        data::apply_standardization(&mut tiles, stats);
    }
    let idxs: Vec<usize> = match subset {
        "all" => (0..tiles.len()).collect(),
        "train" | "val" | "test" => {
            let plan =
                data::stratified_split(&tiles, cfg.data.split_fractions, cfg.data.split_seed)?;
            match subset {
                "train" => plan.train,
                "val" => plan.val,
                _ => plan.test,
            }
        }
        other => {
            return Err(Error::Config(format!(
                "unknown subset {other:?} (use train|val|test|all)"
            )))
        }
    };
    let (_, metrics) = trainer::evaluate(&model, &tiles, &idxs, &cfg.loss, cfg.train.batch_size)?;
    Ok(metrics)
}

/// Predict a binary mask raster from a raw backscatter raster.
pub fn run_predict(
    checkpoint_path: &Path,
    raster_path: &Path,
    out_path: &Path,
    tile_size: usize,
    threshold: f64,
) -> Result<()> {
    let (model, stats) = checkpoint::load_checkpoint::<f32>(checkpoint_path)?;
    let raster = data::load_raster(raster_path)?;
    let mask = experiments::predict_raster(&model, &raster, stats.as_ref(), tile_size, threshold)?;
    data::save_raster(&mask, out_path)?;
    Ok(())
}
