//! Independent oracles shared by the integration suites: a six-nested-loop
//! convolution, central-difference gradients, scalar loss/posterior
//! re-implementations, and a per-pixel confusion counter. These deliberately
//! avoid the library's compute paths.

#![allow(dead_code)]

use modeseg::scalar::Scalar;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_vec<S: Scalar>(rng: &mut ChaCha8Rng, len: usize, lo: f64, hi: f64) -> Vec<S> {
    (0..len).map(|_| S::from_f64(rng.random_range(lo..hi))).collect()
}

/// Direct cross-correlation: six nested loops, zero padding.
pub fn conv2d_ref(
    x: &[f64],
    (n, cin, h, w): (usize, usize, usize, usize),
    wgt: &[f64],
    (cout, kh, kw): (usize, usize, usize),
    bias: &[f64],
    stride: usize,
    pad: usize,
) -> Vec<f64> {
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (w + 2 * pad - kw) / stride + 1;
    let mut out = vec![0.0; n * cout * oh * ow];
    for ni in 0..n {
        for co in 0..cout {
            for orow in 0..oh {
                for ocol in 0..ow {
                    let mut acc = bias[co];
                    for ci in 0..cin {
                        for ki in 0..kh {
                            for kj in 0..kw {
                                let ih = (orow * stride + ki) as isize - pad as isize;
                                let iw = (ocol * stride + kj) as isize - pad as isize;
                                if ih >= 0 && (ih as usize) < h && iw >= 0 && (iw as usize) < w {
                                    acc += x[((ni * cin + ci) * h + ih as usize) * w + iw as usize]
                                        * wgt[((co * cin + ci) * kh + ki) * kw + kj];
                                }
                            }
                        }
                    }
                    out[((ni * cout + co) * oh + orow) * ow + ocol] = acc;
                }
            }
        }
    }
    out
}

/// Direct 2×2/stride-2 max pooling with first-occurrence ties.
pub fn maxpool_ref(x: &[f64], (n, c, h, w): (usize, usize, usize, usize)) -> (Vec<f64>, Vec<usize>) {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = vec![0.0; n * c * oh * ow];
    let mut idx = vec![0usize; n * c * oh * ow];
    for p in 0..n * c {
        for orow in 0..oh {
            for ocol in 0..ow {
                let mut best = f64::NEG_INFINITY;
                let mut best_i = 0;
                for di in 0..2 {
                    for dj in 0..2 {
                        let i = p * h * w + (2 * orow + di) * w + (2 * ocol + dj);
                        if x[i] > best {
                            best = x[i];
                            best_i = i;
                        }
                    }
                }
                out[p * oh * ow + orow * ow + ocol] = best;
                idx[p * oh * ow + orow * ow + ocol] = best_i;
            }
        }
    }
    (out, idx)
}

/// Maximum error of `analytic` against central finite differences of `f`,
/// relative to the gradient's own magnitude scale.
///
/// `checked` limits how many indices are probed (all when it covers the
/// input). Returns (max_relative_error, worst_index).
pub fn fd_check<S: Scalar>(
    f: &mut dyn FnMut(&[S]) -> f64,
    x: &[S],
    analytic: &[S],
    eps: f64,
    checked: usize,
    scale_floor: f64,
) -> (f64, usize) {
    assert_eq!(x.len(), analytic.len());
    let stride = (x.len() / checked.max(1)).max(1);
    let mut numeric = Vec::new();
    let mut indices = Vec::new();
    for i in (0..x.len()).step_by(stride) {
        let mut plus = x.to_vec();
        plus[i] += S::from_f64(eps);
        let mut minus = x.to_vec();
        minus[i] -= S::from_f64(eps);
        numeric.push((f(&plus) - f(&minus)) / (2.0 * eps));
        indices.push(i);
    }
    let scale = numeric
        .iter()
        .map(|v| v.abs())
        .chain(analytic.iter().map(|v| v.to_f64().abs()))
        .fold(0.0f64, f64::max)
        .max(scale_floor);
    let mut worst = (0.0, 0);
    for (&i, &n) in indices.iter().zip(&numeric) {
        let rel = (analytic[i].to_f64() - n).abs() / scale;
        if rel > worst.0 {
            worst = (rel, i);
        }
    }
    worst
}

/// Scalar Dice loss (global formulation).
pub fn dice_ref(pred: &[f64], target: &[f64], eps: f64) -> f64 {
    let st: f64 = target.iter().sum();
    let sp: f64 = pred.iter().sum();
    let stp: f64 = pred.iter().zip(target).map(|(p, t)| p * t).sum();
    1.0 - (2.0 * stp + eps) / (st + sp + eps)
}

/// Scalar focal loss with the same 1e-7 clamp as the implementation.
pub fn focal_ref(pred: &[f64], target: &[f64], alpha: f64, gamma: f64) -> f64 {
    let mut total = 0.0;
    for (&p, &t) in pred.iter().zip(target) {
        let (pt, at) = if t > 0.5 { (p, alpha) } else { (1.0 - p, 1.0 - alpha) };
        total += -at * (1.0 - pt).powf(gamma) * pt.max(1e-7).ln();
    }
    total / pred.len() as f64
}

/// Scalar α-weighted binary cross-entropy (the γ = 0 focal special case).
pub fn weighted_bce_ref(pred: &[f64], target: &[f64], alpha: f64) -> f64 {
    let mut total = 0.0;
    for (&p, &t) in pred.iter().zip(target) {
        let (pt, at) = if t > 0.5 { (p, alpha) } else { (1.0 - p, 1.0 - alpha) };
        total += -at * pt.max(1e-7).ln();
    }
    total / pred.len() as f64
}

/// Bayes posterior over modes for one scalar activation.
pub fn posterior_ref(x: f64, pi: &[f64], mu: &[f64], var: &[f64], eps: f64) -> Vec<f64> {
    let dens: Vec<f64> = pi
        .iter()
        .zip(mu.iter().zip(var))
        .map(|(&p, (&m, &v))| {
            let s2 = v + eps;
            p * (-((x - m) * (x - m)) / (2.0 * s2)).exp() / (2.0 * std::f64::consts::PI * s2).sqrt()
        })
        .collect();
    let z: f64 = dens.iter().sum();
    dens.iter().map(|d| d / z).collect()
}

/// Per-pixel confusion counting loop.
pub fn confusion_ref(pred: &[f64], target: &[f64], threshold: f64) -> (u64, u64, u64, u64) {
    let (mut tp, mut fp, mut tn, mut fnn) = (0, 0, 0, 0);
    for (&p, &t) in pred.iter().zip(target) {
        match (p >= threshold, t > 0.5) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fnn += 1,
        }
    }
    (tp, fp, tn, fnn)
}
