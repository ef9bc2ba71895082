//! Experiment harness: the hyperparameter grid, zone cross-validation,
//! convergence/speed-up accounting, and full-raster prediction.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{
    self, Raster, SplitPlan, StandardizationStats, Tile, DEFAULT_NODATA,
};
use crate::error::{Error, Result};
use crate::models::{Model, ModelSpec};
use crate::objectives::{LossConfig, LossKind, MetricReport};
use crate::optim::{OptimizerConfig, OptimizerKind};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::trainer::{self, RunRecord, TrainConfig};

/// One cell of the hyperparameter grid.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    pub dropout: f64,
    pub loss: LossKind,
}

/// Axis value sets swept by the search.
#[derive(Clone, Debug)]
pub struct GridAxes {
    pub optimizers: Vec<OptimizerKind>,
    pub learning_rates: Vec<f64>,
    pub dropouts: Vec<f64>,
    pub losses: Vec<LossKind>,
}

impl Default for GridAxes {
    /// The published sweep: 2 optimizers × 3 learning rates × 5 dropout
    /// rates × 3 losses = 90 configurations.
    fn default() -> Self {
        GridAxes {
            optimizers: vec![OptimizerKind::Adam, OptimizerKind::Sgd],
            learning_rates: vec![1e-4, 1e-3, 1e-2],
            dropouts: vec![0.0, 0.1, 0.2, 0.3, 0.5],
            losses: vec![LossKind::Dice, LossKind::Focal, LossKind::Combined],
        }
    }
}

impl GridAxes {
    /// Enumeration order: optimizer, then learning rate, then dropout, then
    /// loss.
    pub fn points(&self) -> Vec<GridPoint> {
        let mut points =
            Vec::with_capacity(self.optimizers.len() * self.learning_rates.len() * self.dropouts.len() * self.losses.len());
        for &optimizer in &self.optimizers {
            for &learning_rate in &self.learning_rates {
                for &dropout in &self.dropouts {
                    for &loss in &self.losses {
                        points.push(GridPoint {
                            optimizer,
                            learning_rate,
                            dropout,
                            loss,
                        });
                    }
                }
            }
        }
        points
    }
}

/// The full published grid in enumeration order.
pub fn grid_points() -> Vec<GridPoint> {
    GridAxes::default().points()
}

#[derive(Debug)]
pub struct GridRun {
    pub index: usize,
    pub point: GridPoint,
    pub val_dsc: Option<f64>,
    pub record: Option<RunRecord>,
    pub error: Option<String>,
}

#[derive(Debug)]
pub struct GridResult {
    pub runs: Vec<GridRun>,
    /// Index of the winning configuration in [`grid_points`] order.
    pub selected: Option<usize>,
}

impl GridResult {
    pub fn selected_point(&self) -> Option<GridPoint> {
        self.selected.map(|i| self.runs[i].point)
    }

    pub fn to_csv(&self) -> String {
        let mut out =
            String::from("index,optimizer,learning_rate,dropout,loss,status,epochs,seconds,val_dsc,selected\n");
        for run in &self.runs {
            let (status, epochs, seconds) = match (&run.record, &run.error) {
                (Some(r), None) => ("ok".to_string(), r.stopped_epoch, r.total_seconds),
                (_, Some(e)) => (format!("failed: {}", e.replace(',', ";")), 0, 0.0),
                _ => ("failed".into(), 0, 0.0),
            };
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{}\n",
                run.index,
                run.point.optimizer,
                run.point.learning_rate,
                run.point.dropout,
                run.point.loss,
                status,
                epochs,
                seconds,
                run.val_dsc.map(|d| d.to_string()).unwrap_or_default(),
                (self.selected == Some(run.index)) as u8,
            ));
        }
        out
    }
}

fn run_grid_point<S: Scalar>(
    index: usize,
    point: GridPoint,
    base_spec: &ModelSpec,
    tiles: &[Tile],
    plan: &SplitPlan,
    train_cfg: &TrainConfig,
) -> GridRun {
    let spec = ModelSpec {
        dropout_rate: point.dropout,
        ..*base_spec
    };
    let opt_cfg = OptimizerConfig {
        kind: point.optimizer,
        learning_rate: point.learning_rate,
        ..OptimizerConfig::default()
    };
    let loss_cfg = LossConfig {
        kind: point.loss,
        ..LossConfig::default()
    };
    let outcome = Model::<S>::build(&spec, train_cfg.seed).and_then(|mut model| {
        trainer::train(
            &mut model,
            tiles,
            &plan.train,
            &plan.val,
            train_cfg,
            &opt_cfg,
            &loss_cfg,
        )
    });
    match outcome {
        Ok(record) => GridRun {
            index,
            point,
            val_dsc: Some(record.best_val_dsc()),
            record: Some(record),
            error: None,
        },
        Err(Error::Diverged { record, .. }) => GridRun {
            index,
            point,
            val_dsc: None,
            record: Some(*record),
            error: Some("diverged".into()),
        },
        Err(e) => GridRun {
            index,
            point,
            val_dsc: None,
            record: None,
            error: Some(e.to_string()),
        },
    }
}

/// Exhaustive search over the default 90-cell grid.
pub fn grid_search<S: Scalar>(
    base_spec: &ModelSpec,
    tiles: &[Tile],
    plan: &SplitPlan,
    train_cfg: &TrainConfig,
    workers: usize,
) -> Result<GridResult> {
    grid_search_with::<S>(&GridAxes::default(), base_spec, tiles, plan, train_cfg, workers)
}

/// Exhaustive search over the given axes. Single-run failures are recorded
/// and the search continues. Selection is the best validation Dsc; ties break
/// to the lower learning rate, then to enumeration order.
pub fn grid_search_with<S: Scalar>(
    axes: &GridAxes,
    base_spec: &ModelSpec,
    tiles: &[Tile],
    plan: &SplitPlan,
    train_cfg: &TrainConfig,
    workers: usize,
) -> Result<GridResult> {
    plan.validate(tiles.len())?;
    let points = axes.points();
    let run_one = |(index, point): (usize, &GridPoint)| {
        run_grid_point::<S>(index, *point, base_spec, tiles, plan, train_cfg)
    };
    let runs: Vec<GridRun> = if workers > 1 {
        points.par_iter().enumerate().map(run_one).collect()
    } else {
        points.iter().enumerate().map(run_one).collect()
    };

    let selected = select_best(&runs);
    Ok(GridResult { runs, selected })
}

fn select_best(runs: &[GridRun]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, run) in runs.iter().enumerate() {
        let Some(dsc) = run.val_dsc else { continue };
        if !dsc.is_finite() {
            continue;
        }
        match best {
            None => best = Some(i),
            Some(b) => {
                let prev = runs[b].val_dsc.unwrap();
                if dsc > prev
                    || (dsc == prev && run.point.learning_rate < runs[b].point.learning_rate)
                {
                    best = Some(i);
                }
            }
        }
    }
    best
}

#[derive(Debug)]
pub struct FoldOutcome {
    pub zone: u8,
    pub standardization: Option<StandardizationStats>,
    pub test_metrics: Option<MetricReport>,
    pub record: Option<RunRecord>,
    pub error: Option<String>,
}

#[derive(Debug)]
pub struct CvResult {
    pub folds: Vec<FoldOutcome>,
}

impl CvResult {
    /// Table-style CSV: one row per metric, one column per test zone.
    pub fn to_csv(&self, model_label: &str) -> String {
        let mut out = String::from("model,metric,zone1,zone2,zone3,zone4\n");
        let metric_names = ["accuracy", "precision", "recall", "f1", "iou", "dsc"];
        let pick = |m: &MetricReport, name: &str| -> f64 {
            match name {
                "accuracy" => m.accuracy,
                "precision" => m.precision,
                "recall" => m.recall,
                "f1" => m.f1,
                "iou" => m.iou,
                _ => m.dsc,
            }
        };
        for name in metric_names {
            out.push_str(&format!("{model_label},{name}"));
            for fold in &self.folds {
                match &fold.test_metrics {
                    Some(m) => out.push_str(&format!(",{}", pick(m, name))),
                    None => out.push(','),
                }
            }
            out.push('\n');
        }
        out
    }
}

/// Carve a validation subset out of `pool` by water-fraction strata.
fn carve_validation(
    tiles: &[Tile],
    pool: &[usize],
    val_fraction: f64,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>)> {
    let subset: Vec<Tile> = pool.iter().map(|&i| tiles[i].clone()).collect();
    let plan = data::stratified_split(&subset, (1.0 - val_fraction, val_fraction, 0.0), seed)?;
    let train = plan.train.iter().map(|&i| pool[i]).collect();
    let val = plan.val.iter().map(|&i| pool[i]).collect();
    Ok((train, val))
}

/// 4-fold zone cross-validation: per fold, re-standardize from that fold's
/// training zones, carve a stratified validation subset for early stopping,
/// train, and score the held-out zone. Fold failures are recorded without
/// aborting the remaining folds.
pub fn cross_validate<S: Scalar>(
    spec: &ModelSpec,
    raw_tiles: &[Tile],
    train_cfg: &TrainConfig,
    opt_cfg: &OptimizerConfig,
    loss_cfg: &LossConfig,
    val_fraction: f64,
    workers: usize,
) -> Result<CvResult> {
    let folds = data::zone_folds(raw_tiles)?;
    let run_fold = |(i, fold): (usize, &SplitPlan)| -> FoldOutcome {
        let zone = (i + 1) as u8;
        let outcome = (|| -> Result<FoldOutcome> {
            let mut tiles = raw_tiles.to_vec();
            let (train_idx, val_idx) =
                carve_validation(&tiles, &fold.train, val_fraction, train_cfg.seed)?;
            let stats = data::standardize(&mut tiles, &train_idx)?;
            let mut model = Model::<S>::build(spec, train_cfg.seed)?;
            let record = trainer::train(
                &mut model,
                &tiles,
                &train_idx,
                &val_idx,
                train_cfg,
                opt_cfg,
                loss_cfg,
            )?;
            let (_, metrics) =
                trainer::evaluate(&model, &tiles, &fold.test, loss_cfg, train_cfg.batch_size)?;
            Ok(FoldOutcome {
                zone,
                standardization: Some(stats),
                test_metrics: Some(metrics),
                record: Some(record),
                error: None,
            })
        })();
        outcome.unwrap_or_else(|e| FoldOutcome {
            zone,
            standardization: None,
            test_metrics: None,
            record: None,
            error: Some(e.to_string()),
        })
    };
    let folds_out: Vec<FoldOutcome> = if workers > 1 {
        folds.par_iter().enumerate().map(run_fold).collect()
    } else {
        folds.iter().enumerate().map(run_fold).collect()
    };
    Ok(CvResult { folds: folds_out })
}

#[derive(Clone, Debug, Serialize)]
pub struct SpeedupRow {
    pub model: String,
    pub training_epochs: usize,
    pub training_time_s: f64,
    pub speed_up: f64,
}

/// Convergence table: epochs-to-stop, wall seconds, and the
/// baseline-time / normalized-time ratio.
pub fn speedup_report(
    baseline: (&str, &RunRecord),
    normalized: (&str, &RunRecord),
) -> Vec<SpeedupRow> {
    let ratio = if normalized.1.total_seconds > 0.0 {
        baseline.1.total_seconds / normalized.1.total_seconds
    } else {
        f64::INFINITY
    };
    vec![
        SpeedupRow {
            model: baseline.0.to_string(),
            training_epochs: baseline.1.stopped_epoch,
            training_time_s: baseline.1.total_seconds,
            speed_up: 1.0,
        },
        SpeedupRow {
            model: normalized.0.to_string(),
            training_epochs: normalized.1.stopped_epoch,
            training_time_s: normalized.1.total_seconds,
            speed_up: ratio,
        },
    ]
}

pub fn speedup_csv(rows: &[SpeedupRow]) -> String {
    let mut out = String::from("model,training_epochs,training_time_s,speed_up\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{}\n",
            r.model, r.training_epochs, r.training_time_s, r.speed_up
        ));
    }
    out
}

/// Tile a raster, run inference, and stitch the thresholded tiles back into
/// a full-size binary mask raster. Grid margins and input nodata pixels are
/// emitted as nodata.
pub fn predict_raster<S: Scalar>(
    model: &Model<S>,
    raster: &Raster,
    standardization: Option<&StandardizationStats>,
    tile_size: usize,
    threshold: f64,
) -> Result<Raster> {
    let div = 1usize << model.spec().depth;
    if tile_size % div != 0 {
        return Err(Error::Config(format!(
            "tile size {tile_size} not divisible by 2^depth = {div}"
        )));
    }
    let rows = raster.height / tile_size;
    let cols = raster.width / tile_size;
    if rows == 0 || cols == 0 {
        return Err(Error::Config(format!(
            "raster {}x{} smaller than one {tile_size}px tile",
            raster.width, raster.height
        )));
    }
    let mut values = vec![DEFAULT_NODATA; raster.width * raster.height];
    let mut nodata = vec![true; raster.width * raster.height];

    for tr in 0..rows {
        for tc in 0..cols {
            let (r0, c0) = (tr * tile_size, tc * tile_size);
            let mut img = Vec::with_capacity(tile_size * tile_size);
            for r in r0..r0 + tile_size {
                let row = r * raster.width + c0;
                img.extend_from_slice(&raster.values[row..row + tile_size]);
            }
            if let Some(stats) = standardization {
                data::standardize_values(&mut img, stats);
            }
            let x = Tensor::from_vec(
                img.iter().map(|&v| S::from_f32(v)).collect(),
                [1, 1, tile_size, tile_size],
            )?;
            let probs = model.forward_eval(&x)?;
            let thr = S::from_f64(threshold);
            for r in 0..tile_size {
                let dst = (r0 + r) * raster.width + c0;
                for c in 0..tile_size {
                    let water = probs.data()[r * tile_size + c] >= thr;
                    values[dst + c] = if water { 1.0 } else { 0.0 };
                    nodata[dst + c] = false;
                }
            }
        }
    }
    if let Some(src) = &raster.nodata_mask {
        for (i, &nd) in src.iter().enumerate() {
            if nd {
                nodata[i] = true;
                values[i] = DEFAULT_NODATA;
            }
        }
    }
    Ok(Raster {
        width: raster.width,
        height: raster.height,
        values,
        nodata_mask: Some(nodata),
    })
}
