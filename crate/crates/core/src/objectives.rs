//! Loss functions for the binary water/non-water task and the six
//! confusion-count metrics reported by the experiment harness.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ops;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Dice,
    Focal,
    Combined,
}

impl std::fmt::Display for LossKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            LossKind::Dice => write!(f, "dice"),
            LossKind::Focal => write!(f, "focal"),
            LossKind::Combined => write!(f, "combined"),
        }
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub kind: LossKind,
    /// Focal class weight for the positive class; negatives get `1 - alpha`.
    pub alpha: f64,
    /// Focal focusing exponent.
    pub focal_gamma: f64,
    /// Dice smoothing term.
    pub smooth_eps: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            kind: LossKind::Dice,
            alpha: 0.25,
            focal_gamma: 2.0,
            smooth_eps: 1e-6,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.alpha && self.alpha < 1.0) {
            return Err(Error::Config(format!(
                "loss alpha must be in (0, 1), got {}",
                self.alpha
            )));
        }
        if self.focal_gamma < 0.0 {
            return Err(Error::Config(format!(
                "focal gamma must be >= 0, got {}",
                self.focal_gamma
            )));
        }
        if self.smooth_eps <= 0.0 {
            return Err(Error::Config(format!(
                "dice smoothing must be > 0, got {}",
                self.smooth_eps
            )));
        }
        Ok(())
    }
}

/// Soft Dice loss over all pixels of the batch:
/// `1 - (2 Σ t·p + ε) / (Σ t + Σ p + ε)`.
pub fn dice_loss<S: Scalar>(
    pred: &Tensor<S>,
    target: &Tensor<S>,
    cfg: &LossConfig,
) -> Result<Tensor<S>> {
    if pred.shape() != target.shape() {
        return Err(Error::Dimension(format!(
            "dice_loss: shape mismatch {:?} vs {:?}",
            pred.dims(),
            target.dims()
        )));
    }
    let eps = S::from_f64(cfg.smooth_eps);
    let mut st = S::ZERO;
    let mut sp = S::ZERO;
    let mut stp = S::ZERO;
    for (&p, &t) in pred.data().iter().zip(target.data()) {
        st += t;
        sp += p;
        stp += t * p;
    }
    let denom = st + sp + eps;
    let value = S::ONE - (S::from_f64(2.0) * stp + eps) / denom;
    let target_c = target.clone();
    let two = S::from_f64(2.0);
    Tensor::from_op(
        vec![value],
        [1],
        vec![pred.clone()],
        Box::new(move |g| {
            // d/dp_i of -(2 stp + eps)/denom with both sums depending on p_i.
            let dx = target_c
                .data()
                .iter()
                .map(|&t| -g[0] * (two * t * denom - (two * stp + eps)) / (denom * denom))
                .collect();
            vec![Some(dx)]
        }),
        "dice_loss",
    )
}

/// Focal loss, averaged over pixels: `-α_t (1-p_t)^γ log(p_t)` with `p_t`
/// clamped below at 1e-7.
pub fn focal_loss<S: Scalar>(
    pred: &Tensor<S>,
    target: &Tensor<S>,
    cfg: &LossConfig,
) -> Result<Tensor<S>> {
    if pred.shape() != target.shape() {
        return Err(Error::Dimension(format!(
            "focal_loss: shape mismatch {:?} vs {:?}",
            pred.dims(),
            target.dims()
        )));
    }
    let n = pred.numel();
    if n == 0 {
        return Err(Error::Contract("focal_loss on empty tensor".into()));
    }
    let alpha = S::from_f64(cfg.alpha);
    let gamma = S::from_f64(cfg.focal_gamma);
    let floor = S::from_f64(1e-7);
    let inv_n = S::ONE / S::from_f64(n as f64);

    let mut total = S::ZERO;
    for (&p, &t) in pred.data().iter().zip(target.data()) {
        let positive = t > S::from_f64(0.5);
        let (pt, at) = if positive { (p, alpha) } else { (S::ONE - p, S::ONE - alpha) };
        let ptc = pt.max_s(floor);
        total += -at * (S::ONE - pt).powf(gamma) * ptc.ln();
    }
    let target_c = target.clone();
    let pred_c = pred.clone();
    Tensor::from_op(
        vec![total * inv_n],
        [1],
        vec![pred.clone()],
        Box::new(move |g| {
            let dx = pred_c
                .data()
                .iter()
                .zip(target_c.data())
                .map(|(&p, &t)| {
                    let positive = t > S::from_f64(0.5);
                    let (pt, at, dpt_dp) = if positive {
                        (p, alpha, S::ONE)
                    } else {
                        (S::ONE - p, S::ONE - alpha, -S::ONE)
                    };
                    let ptc = pt.max_s(floor);
                    let one_m = S::ONE - pt;
                    // d/dpt of -(1-pt)^γ ln(ptc); the clamp zeroes the log term.
                    let log_term = if pt > floor { one_m.powf(gamma) / ptc } else { S::ZERO };
                    let pow_term = if gamma > S::ZERO {
                        -gamma * one_m.powf(gamma - S::ONE) * ptc.ln()
                    } else {
                        S::ZERO
                    };
                    g[0] * -at * (pow_term + log_term) * dpt_dp * inv_n
                })
                .collect();
            vec![Some(dx)]
        }),
        "focal_loss",
    )
}

/// `0.5 · dice + 0.5 · focal`.
pub fn combined_loss<S: Scalar>(
    pred: &Tensor<S>,
    target: &Tensor<S>,
    cfg: &LossConfig,
) -> Result<Tensor<S>> {
    let dice = dice_loss(pred, target, cfg)?;
    let focal = focal_loss(pred, target, cfg)?;
    ops::add_scaled(&dice, S::from_f64(0.5), &focal, S::from_f64(0.5))
}

/// Dispatch on the configured loss kind.
pub fn loss<S: Scalar>(
    pred: &Tensor<S>,
    target: &Tensor<S>,
    cfg: &LossConfig,
) -> Result<Tensor<S>> {
    match cfg.kind {
        LossKind::Dice => dice_loss(pred, target, cfg),
        LossKind::Focal => focal_loss(pred, target, cfg),
        LossKind::Combined => combined_loss(pred, target, cfg),
    }
}

/// Pixel confusion counts; the positive class is water.
#[derive(Clone, Copy, Default, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    pub fn_: u64,
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    /// Micro-aggregation: summing matrices is associative and commutative.
    pub fn merge(&mut self, other: &ConfusionMatrix) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.tn += other.tn;
        self.fn_ += other.fn_;
    }
}

/// Count confusion entries at the given probability threshold.
pub fn confusion<S: Scalar>(pred: &[S], target: &[S], threshold: f64) -> Result<ConfusionMatrix> {
    if pred.len() != target.len() {
        return Err(Error::Dimension(format!(
            "confusion: {} predictions vs {} targets",
            pred.len(),
            target.len()
        )));
    }
    let thr = S::from_f64(threshold);
    let half = S::from_f64(0.5);
    let mut cm = ConfusionMatrix::default();
    for (&p, &t) in pred.iter().zip(target) {
        let predicted_water = p >= thr;
        let is_water = t > half;
        match (predicted_water, is_water) {
            (true, true) => cm.tp += 1,
            (true, false) => cm.fp += 1,
            (false, false) => cm.tn += 1,
            (false, true) => cm.fn_ += 1,
        }
    }
    Ok(cm)
}

/// The six reported metrics, each in [0, 1].
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct MetricReport {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub iou: f64,
    pub dsc: f64,
    /// Set when any denominator was zero and the affected metrics were
    /// reported as 0.
    pub degenerate: bool,
}

impl MetricReport {
    /// Column order used in every emitted CSV.
    pub const CSV_HEADER: &'static str = "accuracy,precision,recall,f1,iou,dsc";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.accuracy, self.precision, self.recall, self.f1, self.iou, self.dsc
        )
    }
}

fn ratio(num: u64, den: u64, degenerate: &mut bool) -> f64 {
    if den == 0 {
        *degenerate = true;
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Derive the metric report from confusion counts. F1 is computed through the
/// count identity `2·TP / (2·TP + FP + FN)`, which equals
/// `2·precision·recall / (precision + recall)` and makes F1 == Dsc exact.
pub fn metrics(cm: &ConfusionMatrix) -> Result<MetricReport> {
    if cm.total() == 0 {
        return Err(Error::Contract("metrics of an empty confusion matrix".into()));
    }
    let mut degenerate = false;
    let accuracy = (cm.tp + cm.tn) as f64 / cm.total() as f64;
    let precision = ratio(cm.tp, cm.tp + cm.fp, &mut degenerate);
    let recall = ratio(cm.tp, cm.tp + cm.fn_, &mut degenerate);
    let dsc = ratio(2 * cm.tp, 2 * cm.tp + cm.fp + cm.fn_, &mut degenerate);
    let iou = ratio(cm.tp, cm.tp + cm.fp + cm.fn_, &mut degenerate);
    Ok(MetricReport {
        accuracy,
        precision,
        recall,
        f1: dsc,
        iou,
        dsc,
        degenerate,
    })
}
