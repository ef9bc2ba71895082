//! Training loop with validation-loss early stopping, plus the per-epoch run
//! log used for convergence-time accounting.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Tile;
use crate::error::{Error, Result};
use crate::models::Model;
use crate::objectives::{self, LossConfig, MetricReport};
use crate::optim::{Optimizer, OptimizerConfig};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Consecutive epochs without validation-loss improvement before stopping.
    pub patience: usize,
    /// Minimum decrease that counts as an improvement.
    pub min_delta: f64,
    /// Restore the best-epoch weights after stopping.
    pub restore_best: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 32,
            max_epochs: 60,
            patience: 5,
            min_delta: 1e-6,
            restore_best: true,
            seed: 42,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 1 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if self.patience < 1 {
            return Err(Error::Config("patience must be >= 1".into()));
        }
        if self.max_epochs < 1 {
            return Err(Error::Config("max_epochs must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_metrics: MetricReport,
    pub seconds: f64,
}

/// Complete record of one training run.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunRecord {
    pub epochs: Vec<EpochLog>,
    pub stopped_epoch: usize,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub total_seconds: f64,
}

impl RunRecord {
    pub fn best_val_dsc(&self) -> f64 {
        self.epochs
            .get(self.best_epoch.wrapping_sub(1))
            .map(|e| e.val_metrics.dsc)
            .unwrap_or(0.0)
    }

    /// `record.jsonl`: one JSON object per epoch.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.epochs {
            out.push_str(&serde_json::to_string(e).expect("epoch log serializes"));
            out.push('\n');
        }
        out
    }

    /// `loss_curve.csv`: epoch, train loss, validation loss.
    pub fn to_loss_curve_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,val_loss\n");
        for e in &self.epochs {
            out.push_str(&format!("{},{},{}\n", e.epoch, e.train_loss, e.val_loss));
        }
        out
    }
}

/// Assemble `[B, 1, T, T]` image and mask tensors from a tile subset.
pub fn batch_tensors<S: Scalar>(tiles: &[Tile], idxs: &[usize]) -> Result<(Tensor<S>, Tensor<S>)> {
    let t = tiles
        .first()
        .map(|tile| tile.size)
        .ok_or_else(|| Error::Data("empty tile set".into()))?;
    let plane = t * t;
    let mut images = Vec::with_capacity(idxs.len() * plane);
    let mut masks = Vec::with_capacity(idxs.len() * plane);
    for &i in idxs {
        let tile = &tiles[i];
        images.extend(tile.image.iter().map(|&v| S::from_f32(v)));
        masks.extend(tile.mask.iter().map(|&m| if m > 0 { S::ONE } else { S::ZERO }));
    }
    Ok((
        Tensor::from_vec(images, [idxs.len(), 1, t, t])?,
        Tensor::from_vec(masks, [idxs.len(), 1, t, t])?,
    ))
}

/// Inference-mode loss and micro-aggregated metrics over a tile set.
pub fn evaluate<S: Scalar>(
    model: &Model<S>,
    tiles: &[Tile],
    idxs: &[usize],
    loss_cfg: &LossConfig,
    batch_size: usize,
) -> Result<(f64, MetricReport)> {
    if idxs.is_empty() {
        return Err(Error::Data("evaluation set is empty".into()));
    }
    let mut cm = objectives::ConfusionMatrix::default();
    let mut loss_sum = 0.0;
    let mut count = 0usize;
    for chunk in idxs.chunks(batch_size) {
        let (x, y) = batch_tensors::<S>(tiles, chunk)?;
        let pred = model.forward_eval(&x)?;
        let loss = objectives::loss(&pred, &y, loss_cfg)?;
        loss_sum += loss.item()?.to_f64() * chunk.len() as f64;
        count += chunk.len();
        cm.merge(&objectives::confusion(pred.data(), y.data(), 0.5)?);
    }
    Ok((loss_sum / count as f64, objectives::metrics(&cm)?))
}

/// Train with seeded shuffling and early stopping on the validation loss.
///
/// Stops once the validation loss has not improved by at least `min_delta`
/// for `patience` consecutive epochs; when `restore_best` is set the weights
/// of the best epoch are reinstated before returning.
pub fn train<S: Scalar>(
    model: &mut Model<S>,
    tiles: &[Tile],
    train_idx: &[usize],
    val_idx: &[usize],
    cfg: &TrainConfig,
    opt_cfg: &OptimizerConfig,
    loss_cfg: &LossConfig,
) -> Result<RunRecord> {
    cfg.validate()?;
    opt_cfg.validate()?;
    loss_cfg.validate()?;
    if train_idx.is_empty() || val_idx.is_empty() {
        return Err(Error::Data("train and validation sets must be non-empty".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut optimizer = Optimizer::new(*opt_cfg);
    let mut order: Vec<usize> = train_idx.to_vec();

    let mut record = RunRecord {
        epochs: Vec::new(),
        stopped_epoch: 0,
        best_epoch: 0,
        best_val_loss: f64::INFINITY,
        total_seconds: 0.0,
    };
    let mut best_snapshot: Option<Vec<crate::models::StateEntry<S>>> = None;
    let mut stale_epochs = 0usize;
    let start = Instant::now();

    for epoch in 1..=cfg.max_epochs {
        let epoch_start = Instant::now();
        order.shuffle(&mut rng);

        let mut train_loss_sum = 0.0;
        let mut seen = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let (x, y) = batch_tensors::<S>(tiles, chunk)?;
            let step = (|| -> Result<f64> {
                let pred = model.forward_train(&x, &mut rng)?;
                let loss = objectives::loss(&pred, &y, loss_cfg)?;
                let value = loss.item()?.to_f64();
                let grads = loss.backward()?;
                optimizer.step(model, &grads)?;
                Ok(value)
            })();
            match step {
                Ok(value) if value.is_finite() => {
                    train_loss_sum += value * chunk.len() as f64;
                    seen += chunk.len();
                }
                Ok(_) | Err(Error::NonFinite { .. }) => {
                    record.stopped_epoch = epoch;
                    record.total_seconds = start.elapsed().as_secs_f64();
                    return Err(Error::Diverged {
                        epoch,
                        record: Box::new(record),
                    });
                }
                Err(e) => return Err(e),
            }
        }
        let train_loss = train_loss_sum / seen as f64;

        let (val_loss, val_metrics) =
            match evaluate(model, tiles, val_idx, loss_cfg, cfg.batch_size) {
                Ok(v) => v,
                Err(Error::NonFinite { .. }) => {
                    record.stopped_epoch = epoch;
                    record.total_seconds = start.elapsed().as_secs_f64();
                    return Err(Error::Diverged {
                        epoch,
                        record: Box::new(record),
                    });
                }
                Err(e) => return Err(e),
            };
        if !val_loss.is_finite() {
            record.stopped_epoch = epoch;
            record.total_seconds = start.elapsed().as_secs_f64();
            return Err(Error::Diverged {
                epoch,
                record: Box::new(record),
            });
        }

        record.epochs.push(EpochLog {
            epoch,
            train_loss,
            val_loss,
            val_metrics,
            seconds: epoch_start.elapsed().as_secs_f64(),
        });
        record.stopped_epoch = epoch;

        if val_loss < record.best_val_loss - cfg.min_delta {
            record.best_val_loss = val_loss;
            record.best_epoch = epoch;
            stale_epochs = 0;
            if cfg.restore_best {
                best_snapshot = Some(model.export_state());
            }
        } else {
            stale_epochs += 1;
            if stale_epochs >= cfg.patience {
                break;
            }
        }
    }

    if let Some(snapshot) = best_snapshot {
        model.import_state(&snapshot)?;
    }
    record.total_seconds = start.elapsed().as_secs_f64();
    Ok(record)
}
