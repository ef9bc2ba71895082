//! Batch Normalization and its Gaussian-mixture generalization, Mode
//! Normalization.
//!
//! Mode Normalization models the activations of each channel as a K-component
//! Gaussian mixture. Per batch, the mixture is refreshed by EM (warm-started
//! from the previous batch), every activation is hard-assigned to its
//! highest-posterior mode, and each non-empty (mode, channel) partition is
//! standardized with its own within-batch statistics before a mode-specific
//! affine map. With K = 1 the layer degenerates exactly to Batch
//! Normalization.
//!
//! The mixture estimation stays outside the gradient path; gradients flow
//! through the partition statistics exactly as BN gradients flow through the
//! batch statistics. Modes are kept sorted by ascending mean after every EM
//! update (affine rows are permuted along), so the mode-index-to-affine
//! mapping is stable across batches.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormKind {
    None,
    Batch,
    Mode,
}

impl std::fmt::Display for NormKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            NormKind::None => write!(f, "none"),
            NormKind::Batch => write!(f, "batch"),
            NormKind::Mode => write!(f, "mode"),
        }
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NormConfig {
    pub kind: NormKind,
    /// Mode count K (only used by `kind = mode`).
    pub modes: usize,
    pub epsilon: f64,
    /// Running-average blend factor in (0, 1].
    pub momentum: f64,
    /// EM iterations per batch.
    pub em_iters: usize,
    /// Mixture weight below which a mode is re-seeded.
    pub min_mode_weight: f64,
}

impl Default for NormConfig {
    fn default() -> Self {
        NormConfig {
            kind: NormKind::Batch,
            modes: 2,
            epsilon: 1e-5,
            momentum: 0.1,
            em_iters: 1,
            min_mode_weight: 1e-3,
        }
    }
}

impl NormConfig {
    pub fn validate(&self) -> Result<()> {
        if self.modes < 1 {
            return Err(Error::Config("norm modes must be >= 1".into()));
        }
        if self.epsilon <= 0.0 {
            return Err(Error::Config("norm epsilon must be > 0".into()));
        }
        if !(0.0 < self.momentum && self.momentum <= 1.0) {
            return Err(Error::Config("norm momentum must be in (0, 1]".into()));
        }
        if self.em_iters < 1 {
            return Err(Error::Config("norm em_iters must be >= 1".into()));
        }
        Ok(())
    }
}

/// Per-mode learnable scale and shift, both `[K, C]`.
pub struct AffineParams<S: Scalar> {
    pub gamma: Tensor<S>,
    pub beta: Tensor<S>,
    pub modes: usize,
    pub channels: usize,
}

impl<S: Scalar> AffineParams<S> {
    pub fn new(modes: usize, channels: usize) -> Self {
        AffineParams {
            gamma: Tensor::param(vec![S::ONE; modes * channels], [modes, channels]).unwrap(),
            beta: Tensor::param(vec![S::ZERO; modes * channels], [modes, channels]).unwrap(),
            modes,
            channels,
        }
    }

    /// Reorder affine rows per channel alongside a mode resort.
    fn permute(&mut self, perms: &[Vec<usize>]) {
        if perms.iter().all(|p| p.iter().enumerate().all(|(i, &v)| i == v)) {
            return;
        }
        let (k, c) = (self.modes, self.channels);
        let mut gamma = self.gamma.data().to_vec();
        let mut beta = self.beta.data().to_vec();
        for (ci, perm) in perms.iter().enumerate() {
            for (ki, &src) in perm.iter().enumerate() {
                gamma[ki * c + ci] = self.gamma.data()[src * c + ci];
                beta[ki * c + ci] = self.beta.data()[src * c + ci];
            }
        }
        self.gamma = Tensor::param(gamma, [k, c]).unwrap();
        self.beta = Tensor::param(beta, [k, c]).unwrap();
    }
}

/// Single-mode batch statistics plus running copies for inference.
pub struct BatchStats<S: Scalar> {
    pub channels: usize,
    /// Statistics of the most recent training batch.
    pub mu: Vec<S>,
    pub var: Vec<S>,
    /// Elements that contributed to the last batch statistics.
    pub count: usize,
    pub running_mu: Vec<S>,
    pub running_var: Vec<S>,
}

impl<S: Scalar> BatchStats<S> {
    pub fn new(channels: usize) -> Self {
        BatchStats {
            channels,
            mu: vec![S::ZERO; channels],
            var: vec![S::ZERO; channels],
            count: 0,
            running_mu: vec![S::ZERO; channels],
            running_var: vec![S::ONE; channels],
        }
    }
}

/// Per-channel K-mode Gaussian mixture, `[K, C]` buffers indexed `k * C + c`,
/// plus running copies for inference.
pub struct MixtureState<S: Scalar> {
    pub modes: usize,
    pub channels: usize,
    pub pi: Vec<S>,
    pub mu: Vec<S>,
    pub var: Vec<S>,
    pub running_pi: Vec<S>,
    pub running_mu: Vec<S>,
    pub running_var: Vec<S>,
    pub initialized: bool,
}

impl<S: Scalar> MixtureState<S> {
    pub fn empty(modes: usize, channels: usize) -> Self {
        let kc = modes * channels;
        let uniform = S::ONE / S::from_f64(modes as f64);
        MixtureState {
            modes,
            channels,
            pi: vec![uniform; kc],
            mu: vec![S::ZERO; kc],
            var: vec![S::ONE; kc],
            running_pi: vec![uniform; kc],
            running_mu: vec![S::ZERO; kc],
            running_var: vec![S::ONE; kc],
            initialized: false,
        }
    }
}

/// Copy out all activations of one channel in (batch, row, col) order.
fn channel_values<S: Scalar>(x: &[S], batch: usize, channels: usize, plane: usize, c: usize) -> Vec<S> {
    let mut vals = Vec::with_capacity(batch * plane);
    for n in 0..batch {
        let base = (n * channels + c) * plane;
        vals.extend_from_slice(&x[base..base + plane]);
    }
    vals
}

fn mean_and_var<S: Scalar>(vals: &[S]) -> (S, S) {
    let m = S::from_f64(vals.len() as f64);
    let mut sum = S::ZERO;
    for &v in vals {
        sum += v;
    }
    let mu = sum / m;
    let mut sse = S::ZERO;
    for &v in vals {
        let d = v - mu;
        sse += d * d;
    }
    (mu, sse / m)
}

/// Standardize per channel with batch statistics (training) or running
/// statistics (inference), then apply the learnable affine map. Gradients
/// flow through the batch statistics.
pub fn batch_norm_forward<S: Scalar>(
    x: &Tensor<S>,
    stats: &mut BatchStats<S>,
    affine: &AffineParams<S>,
    cfg: &NormConfig,
    training: bool,
) -> Result<Tensor<S>> {
    if training {
        batch_norm_train(x, stats, affine, cfg)
    } else {
        batch_norm_eval(x, stats, affine, cfg)
    }
}

fn check_norm_shapes<S: Scalar>(
    x: &Tensor<S>,
    channels: usize,
    affine: &AffineParams<S>,
    expected_modes: Option<usize>,
) -> Result<(usize, usize, usize, usize)> {
    let (n, c, h, w) = x.shape().nchw()?;
    if c != channels {
        return Err(Error::Dimension(format!(
            "norm layer built for {channels} channels, input has {c}"
        )));
    }
    if affine.channels != c {
        return Err(Error::Dimension(format!(
            "affine built for {} channels, input has {c}",
            affine.channels
        )));
    }
    if let Some(k) = expected_modes {
        if affine.modes != k {
            return Err(Error::Contract(format!(
                "affine has {} mode rows, expected {k}",
                affine.modes
            )));
        }
    }
    Ok((n, c, h, w))
}

fn batch_norm_train<S: Scalar>(
    x: &Tensor<S>,
    stats: &mut BatchStats<S>,
    affine: &AffineParams<S>,
    cfg: &NormConfig,
) -> Result<Tensor<S>> {
    let (n, c, h, w) = check_norm_shapes(x, stats.channels, affine, Some(1))?;
    let plane = h * w;
    let m = n * plane;
    if m == 0 {
        return Err(Error::Dimension("batch norm over zero elements".into()));
    }
    let eps = S::from_f64(cfg.epsilon);
    let mom = S::from_f64(cfg.momentum);

    let channel_stats: Vec<(S, S)> = (0..c)
        .into_par_iter()
        .map(|ci| mean_and_var(&channel_values(x.data(), n, c, plane, ci)))
        .collect();
    let mut ivar = vec![S::ZERO; c];
    for (ci, &(mu, var)) in channel_stats.iter().enumerate() {
        stats.mu[ci] = mu;
        stats.var[ci] = var;
        stats.running_mu[ci] = (S::ONE - mom) * stats.running_mu[ci] + mom * mu;
        stats.running_var[ci] = (S::ONE - mom) * stats.running_var[ci] + mom * var;
        ivar[ci] = S::ONE / (var + eps).sqrt();
    }
    stats.count = m;

    let mut xhat = vec![S::ZERO; x.numel()];
    let mut y = vec![S::ZERO; x.numel()];
    let xd = x.data();
    let mu_v = stats.mu.clone();
    y.par_chunks_mut(c * plane)
        .zip(xhat.par_chunks_mut(c * plane))
        .zip(xd.par_chunks(c * plane))
        .for_each(|((y_n, xh_n), x_n)| {
            for ci in 0..c {
                let g = affine.gamma.data()[ci];
                let b = affine.beta.data()[ci];
                let mu = mu_v[ci];
                let iv = ivar[ci];
                let base = ci * plane;
                for j in 0..plane {
                    let xh = (x_n[base + j] - mu) * iv;
                    xh_n[base + j] = xh;
                    y_n[base + j] = g * xh + b;
                }
            }
        });

    let xhat = Arc::new(xhat);
    let gamma_c = affine.gamma.clone();
    let shape = x.shape().clone();
    let m_s = S::from_f64(m as f64);
    Tensor::from_op(
        y,
        shape,
        vec![x.clone(), affine.gamma.clone(), affine.beta.clone()],
        Box::new(move |dy| {
            // per-channel Σ dy and Σ dy ⊙ x̂
            let sums: Vec<(S, S)> = (0..c)
                .into_par_iter()
                .map(|ci| {
                    let mut s1 = S::ZERO;
                    let mut s2 = S::ZERO;
                    for ni in 0..n {
                        let base = (ni * c + ci) * plane;
                        for j in 0..plane {
                            s1 += dy[base + j];
                            s2 += dy[base + j] * xhat[base + j];
                        }
                    }
                    (s1, s2)
                })
                .collect();
            let dgamma: Vec<S> = sums.iter().map(|&(_, s2)| s2).collect();
            let dbeta: Vec<S> = sums.iter().map(|&(s1, _)| s1).collect();
            let mut dx = vec![S::ZERO; n * c * plane];
            let xhat = Arc::clone(&xhat);
            dx.par_chunks_mut(c * plane)
                .enumerate()
                .for_each(|(ni, dx_n)| {
                    for ci in 0..c {
                        let (s1, s2) = sums[ci];
                        let scale = gamma_c.data()[ci] * ivar[ci];
                        let mean_dy = s1 / m_s;
                        let mean_dy_xhat = s2 / m_s;
                        let base = (ni * c + ci) * plane;
                        for j in 0..plane {
                            dx_n[ci * plane + j] = scale
                                * (dy[base + j] - mean_dy - xhat[base + j] * mean_dy_xhat);
                        }
                    }
                });
            vec![Some(dx), Some(dgamma), Some(dbeta)]
        }),
        "batch_norm",
    )
}

fn batch_norm_eval<S: Scalar>(
    x: &Tensor<S>,
    stats: &BatchStats<S>,
    affine: &AffineParams<S>,
    cfg: &NormConfig,
) -> Result<Tensor<S>> {
    let (n, c, h, w) = check_norm_shapes(x, stats.channels, affine, Some(1))?;
    let plane = h * w;
    let eps = S::from_f64(cfg.epsilon);
    let ivar: Vec<S> = stats
        .running_var
        .iter()
        .map(|&v| S::ONE / (v + eps).sqrt())
        .collect();
    let r_mu = stats.running_mu.clone();

    let xd = x.data();
    let mut y = vec![S::ZERO; x.numel()];
    let mut xhat = vec![S::ZERO; x.numel()];
    for ni in 0..n {
        for ci in 0..c {
            let base = (ni * c + ci) * plane;
            let g = affine.gamma.data()[ci];
            let b = affine.beta.data()[ci];
            for j in 0..plane {
                let xh = (xd[base + j] - r_mu[ci]) * ivar[ci];
                xhat[base + j] = xh;
                y[base + j] = g * xh + b;
            }
        }
    }
    let xhat = Arc::new(xhat);
    let gamma_c = affine.gamma.clone();
    let shape = x.shape().clone();
    Tensor::from_op(
        y,
        shape,
        vec![x.clone(), affine.gamma.clone(), affine.beta.clone()],
        Box::new(move |dy| {
            let mut dgamma = vec![S::ZERO; c];
            let mut dbeta = vec![S::ZERO; c];
            let mut dx = vec![S::ZERO; n * c * plane];
            for ci in 0..c {
                let scale = gamma_c.data()[ci] * ivar[ci];
                for ni in 0..n {
                    let base = (ni * c + ci) * plane;
                    for j in 0..plane {
                        dgamma[ci] += dy[base + j] * xhat[base + j];
                        dbeta[ci] += dy[base + j];
                        dx[base + j] = dy[base + j] * scale;
                    }
                }
            }
            vec![Some(dx), Some(dgamma), Some(dbeta)]
        }),
        "batch_norm",
    )
}

/// Posterior responsibilities of one EM refresh, one `[K × m]` row-major
/// block per channel, plus the per-channel mode permutation applied to keep
/// means ascending.
pub struct EmUpdate<S: Scalar> {
    pub responsibilities: Vec<Vec<S>>,
    pub permutations: Vec<Vec<usize>>,
}

/// Run `cfg.em_iters` E/M steps per channel over the batch activations,
/// warm-started from the current state. Re-seeds starved modes, restores
/// ascending-mean ordering, and blends the running copies.
pub fn em_update<S: Scalar>(
    x: &Tensor<S>,
    state: &mut MixtureState<S>,
    cfg: &NormConfig,
) -> Result<EmUpdate<S>> {
    if !state.initialized {
        return Err(Error::Contract(
            "em_update on an uninitialized mixture (call init_mixture first)".into(),
        ));
    }
    let (n, c, h, w) = x.shape().nchw()?;
    if c != state.channels {
        return Err(Error::Dimension(format!(
            "mixture built for {} channels, input has {c}",
            state.channels
        )));
    }
    let plane = h * w;
    let m = n * plane;
    let k = state.modes;
    let eps = S::from_f64(cfg.epsilon);
    let mom = S::from_f64(cfg.momentum);
    let min_w = S::from_f64(cfg.min_mode_weight);
    let half = S::from_f64(0.5);
    let ln_two_pi = S::from_f64((2.0 * std::f64::consts::PI).ln());

    struct ChannelEm<S> {
        pi: Vec<S>,
        mu: Vec<S>,
        var: Vec<S>,
        resp: Vec<S>,
        perm: Vec<usize>,
    }

    let per_channel: Vec<ChannelEm<S>> = (0..c).into_par_iter().map(|ci| {
        let vals = channel_values(x.data(), n, c, plane, ci);
        let mut pi: Vec<S> = (0..k).map(|ki| state.pi[ki * c + ci]).collect();
        let mut mu: Vec<S> = (0..k).map(|ki| state.mu[ki * c + ci]).collect();
        let mut var: Vec<S> = (0..k).map(|ki| state.var[ki * c + ci]).collect();
        let mut resp = vec![S::ZERO; k * m];

        for _ in 0..cfg.em_iters {
            // E-step: posteriors via Bayes in log space.
            let log_coef: Vec<S> = (0..k)
                .map(|ki| pi[ki].max_s(S::from_f64(1e-300)).ln() - half * ((var[ki] + eps).ln() + ln_two_pi))
                .collect();
            let inv_two_var: Vec<S> = (0..k).map(|ki| half / (var[ki] + eps)).collect();
            for (i, &v) in vals.iter().enumerate() {
                let mut best = S::from_f64(f64::NEG_INFINITY);
                for ki in 0..k {
                    let d = v - mu[ki];
                    let lp = log_coef[ki] - d * d * inv_two_var[ki];
                    resp[ki * m + i] = lp;
                    if lp > best {
                        best = lp;
                    }
                }
                let mut z = S::ZERO;
                for ki in 0..k {
                    let e = (resp[ki * m + i] - best).exp();
                    resp[ki * m + i] = e;
                    z += e;
                }
                for ki in 0..k {
                    resp[ki * m + i] /= z;
                }
            }
            // M-step: responsibility-weighted weights, means, variances.
            for ki in 0..k {
                let row = &resp[ki * m..(ki + 1) * m];
                let mut nk = S::ZERO;
                let mut sum = S::ZERO;
                for (i, &r) in row.iter().enumerate() {
                    nk += r;
                    sum += r * vals[i];
                }
                pi[ki] = nk / S::from_f64(m as f64);
                if nk.to_f64() > 1e-12 {
                    let new_mu = sum / nk;
                    let mut sse = S::ZERO;
                    for (i, &r) in row.iter().enumerate() {
                        let d = vals[i] - new_mu;
                        sse += r * d * d;
                    }
                    mu[ki] = new_mu;
                    var[ki] = sse / nk;
                }
            }
        }

        // Re-seed starved modes off the heaviest one.
        let heaviest = (0..k).fold(0, |best, ki| if pi[ki] > pi[best] { ki } else { best });
        let mut reseeded = false;
        for ki in 0..k {
            if pi[ki] < min_w {
                let nudge = (var[heaviest] + eps).sqrt();
                mu[ki] = if ki > heaviest { mu[heaviest] + nudge } else { mu[heaviest] - nudge };
                var[ki] = var[heaviest];
                pi[ki] = min_w;
                reseeded = true;
            }
        }
        if reseeded {
            let z: S = pi.iter().copied().sum();
            for p in pi.iter_mut() {
                *p /= z;
            }
        }

        // Identifiability: sort modes by ascending mean; permute
        // responsibilities rows along.
        let mut perm: Vec<usize> = (0..k).collect();
        perm.sort_by(|&a, &b| mu[a].partial_cmp(&mu[b]).unwrap_or(std::cmp::Ordering::Equal));
        if perm.iter().enumerate().any(|(i, &v)| i != v) {
            let (p0, m0, v0) = (pi.clone(), mu.clone(), var.clone());
            let r0 = resp.clone();
            for (dst, &src) in perm.iter().enumerate() {
                pi[dst] = p0[src];
                mu[dst] = m0[src];
                var[dst] = v0[src];
                resp[dst * m..(dst + 1) * m].copy_from_slice(&r0[src * m..(src + 1) * m]);
            }
        }
        ChannelEm { pi, mu, var, resp, perm }
    }).collect();

    let mut responsibilities = Vec::with_capacity(c);
    let mut permutations = Vec::with_capacity(c);
    for (ci, ch) in per_channel.into_iter().enumerate() {
        for ki in 0..k {
            let idx = ki * c + ci;
            state.pi[idx] = ch.pi[ki];
            state.mu[idx] = ch.mu[ki];
            state.var[idx] = ch.var[ki];
            state.running_pi[idx] = (S::ONE - mom) * state.running_pi[idx] + mom * ch.pi[ki];
            state.running_mu[idx] = (S::ONE - mom) * state.running_mu[idx] + mom * ch.mu[ki];
            state.running_var[idx] = (S::ONE - mom) * state.running_var[idx] + mom * ch.var[ki];
        }
        responsibilities.push(ch.resp);
        permutations.push(ch.perm);
    }

    Ok(EmUpdate {
        responsibilities,
        permutations,
    })
}

/// Hard assignment: the highest-posterior mode per activation, ties broken
/// toward the lower mode index. Returns one mode index per element of `x`.
pub fn assign_modes<S: Scalar>(
    x: &Tensor<S>,
    state: &MixtureState<S>,
    cfg: &NormConfig,
    use_running: bool,
) -> Result<Vec<u8>> {
    let (_, c, h, w) = x.shape().nchw()?;
    if c != state.channels {
        return Err(Error::Dimension(format!(
            "mixture built for {} channels, input has {c}",
            state.channels
        )));
    }
    let (pi, mu, var) = if use_running {
        (&state.running_pi, &state.running_mu, &state.running_var)
    } else {
        (&state.pi, &state.mu, &state.var)
    };
    let plane = h * w;
    let k = state.modes;
    let eps = S::from_f64(cfg.epsilon);
    let half = S::from_f64(0.5);

    // Posterior argmax == argmax of the weighted log densities (shared
    // denominator). Coefficients per (mode, channel) are precomputed; the
    // fill runs parallel over samples.
    let mut log_coef = vec![S::ZERO; k * c];
    let mut inv_two_var = vec![S::ZERO; k * c];
    for idx in 0..k * c {
        log_coef[idx] = pi[idx].max_s(S::from_f64(1e-300)).ln() - half * (var[idx] + eps).ln();
        inv_two_var[idx] = half / (var[idx] + eps);
    }
    let mut assign = vec![0u8; x.numel()];
    assign
        .par_chunks_mut(c * plane)
        .zip(x.data().par_chunks(c * plane))
        .for_each(|(a_n, x_n)| {
            for ci in 0..c {
                for j in 0..plane {
                    let v = x_n[ci * plane + j];
                    let mut best_k = 0usize;
                    let mut best = S::from_f64(f64::NEG_INFINITY);
                    for ki in 0..k {
                        let kc = ki * c + ci;
                        let d = v - mu[kc];
                        let lp = log_coef[kc] - d * d * inv_two_var[kc];
                        if lp > best {
                            best = lp;
                            best_k = ki;
                        }
                    }
                    a_n[ci * plane + j] = best_k as u8;
                }
            }
        });
    Ok(assign)
}

/// Seed a mixture from the first training batch: per channel, means at the K
/// evenly spaced quantiles (the mean itself for K = 1), variances at the
/// batch variance, uniform weights. Running copies start equal.
pub fn init_mixture<S: Scalar>(
    first_batch: &Tensor<S>,
    modes: usize,
    _cfg: &NormConfig,
) -> Result<MixtureState<S>> {
    let (n, c, h, w) = first_batch.shape().nchw()?;
    let plane = h * w;
    let mut state = MixtureState::empty(modes, c);
    for ci in 0..c {
        let mut vals = channel_values(first_batch.data(), n, c, plane, ci);
        let (mean, var) = mean_and_var(&vals);
        vals.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
        for ki in 0..modes {
            let idx = ki * c + ci;
            state.mu[idx] = if modes == 1 {
                mean
            } else {
                // quantile (2k+1)/(2K), linearly interpolated
                let q = (2 * ki + 1) as f64 / (2 * modes) as f64;
                let pos = q * (vals.len() - 1) as f64;
                let lo = pos.floor() as usize;
                let frac = S::from_f64(pos - lo as f64);
                if lo + 1 < vals.len() {
                    vals[lo] * (S::ONE - frac) + vals[lo + 1] * frac
                } else {
                    vals[lo]
                }
            };
            state.var[idx] = var;
        }
    }
    state.running_mu.copy_from_slice(&state.mu);
    state.running_var.copy_from_slice(&state.var);
    state.running_pi.copy_from_slice(&state.pi);
    state.initialized = true;
    Ok(state)
}

/// Mode Normalization forward pass.
///
/// Training: EM refresh → hard assignment (constant w.r.t. differentiation) →
/// per-partition standardization → per-mode affine. Inference: assignment and
/// normalization from the running mixture, a deterministic function of the
/// input alone.
pub fn mode_norm_forward<S: Scalar>(
    x: &Tensor<S>,
    state: &mut MixtureState<S>,
    affine: &mut AffineParams<S>,
    cfg: &NormConfig,
    training: bool,
) -> Result<Tensor<S>> {
    if training {
        if !state.initialized {
            *state = init_mixture(x, cfg.modes, cfg)?;
        }
        let em = em_update(x, state, cfg)?;
        affine.permute(&em.permutations);
        mode_norm_train(x, state, affine, cfg)
    } else {
        mode_norm_eval(x, state, affine, cfg)
    }
}

fn mode_norm_train<S: Scalar>(
    x: &Tensor<S>,
    state: &MixtureState<S>,
    affine: &AffineParams<S>,
    cfg: &NormConfig,
) -> Result<Tensor<S>> {
    let k = state.modes;
    let (n, c, h, w) = check_norm_shapes(x, state.channels, affine, Some(k))?;
    let plane = h * w;
    let eps = S::from_f64(cfg.epsilon);
    let assign = Arc::new(assign_modes(x, state, cfg, false)?);

    // Within-batch partition statistics per (mode, channel), channels in
    // parallel.
    let xd = x.data();
    let per_channel: Vec<(Vec<usize>, Vec<S>, Vec<S>)> = (0..c)
        .into_par_iter()
        .map(|ci| {
            let mut sums = vec![S::ZERO; k];
            let mut counts = vec![0usize; k];
            for ni in 0..n {
                let base = (ni * c + ci) * plane;
                for j in 0..plane {
                    let ki = assign[base + j] as usize;
                    sums[ki] += xd[base + j];
                    counts[ki] += 1;
                }
            }
            let mut means = vec![S::ZERO; k];
            for ki in 0..k {
                if counts[ki] > 0 {
                    means[ki] = sums[ki] / S::from_f64(counts[ki] as f64);
                }
            }
            let mut sses = vec![S::ZERO; k];
            for ni in 0..n {
                let base = (ni * c + ci) * plane;
                for j in 0..plane {
                    let ki = assign[base + j] as usize;
                    let d = xd[base + j] - means[ki];
                    sses[ki] += d * d;
                }
            }
            let mut ivars = vec![S::ZERO; k];
            for ki in 0..k {
                if counts[ki] > 0 {
                    let var = sses[ki] / S::from_f64(counts[ki] as f64);
                    ivars[ki] = S::ONE / (var + eps).sqrt();
                }
            }
            (counts, means, ivars)
        })
        .collect();
    let mut count = vec![0usize; k * c];
    let mut mean = vec![S::ZERO; k * c];
    let mut ivar = vec![S::ZERO; k * c];
    for (ci, (counts, means, ivars)) in per_channel.into_iter().enumerate() {
        for ki in 0..k {
            count[ki * c + ci] = counts[ki];
            mean[ki * c + ci] = means[ki];
            ivar[ki * c + ci] = ivars[ki];
        }
    }

    let mut xhat = vec![S::ZERO; x.numel()];
    let mut y = vec![S::ZERO; x.numel()];
    {
        let gamma = affine.gamma.data();
        let beta = affine.beta.data();
        let assign = &assign;
        let (mean, ivar) = (&mean, &ivar);
        y.par_chunks_mut(c * plane)
            .zip(xhat.par_chunks_mut(c * plane))
            .zip(xd.par_chunks(c * plane))
            .enumerate()
            .for_each(|(ni, ((y_n, xh_n), x_n))| {
                let a_n = &assign[ni * c * plane..(ni + 1) * c * plane];
                for idx in 0..c * plane {
                    let ci = idx / plane;
                    let kc = a_n[idx] as usize * c + ci;
                    let xh = (x_n[idx] - mean[kc]) * ivar[kc];
                    xh_n[idx] = xh;
                    y_n[idx] = gamma[kc] * xh + beta[kc];
                }
            });
    }

    let xhat = Arc::new(xhat);
    let gamma_c = affine.gamma.clone();
    let shape = x.shape().clone();
    Tensor::from_op(
        y,
        shape,
        vec![x.clone(), affine.gamma.clone(), affine.beta.clone()],
        Box::new(move |dy| {
            // Σ dy and Σ dy ⊙ x̂ per partition, channels in parallel
            let sums: Vec<(Vec<S>, Vec<S>)> = (0..c)
                .into_par_iter()
                .map(|ci| {
                    let mut s1 = vec![S::ZERO; k];
                    let mut s2 = vec![S::ZERO; k];
                    for ni in 0..n {
                        let base = (ni * c + ci) * plane;
                        for j in 0..plane {
                            let ki = assign[base + j] as usize;
                            s1[ki] += dy[base + j];
                            s2[ki] += dy[base + j] * xhat[base + j];
                        }
                    }
                    (s1, s2)
                })
                .collect();
            let mut s1 = vec![S::ZERO; k * c];
            let mut s2 = vec![S::ZERO; k * c];
            for (ci, (c1, c2)) in sums.into_iter().enumerate() {
                for ki in 0..k {
                    s1[ki * c + ci] = c1[ki];
                    s2[ki * c + ci] = c2[ki];
                }
            }
            let mut dx = vec![S::ZERO; dy.len()];
            {
                let (s1, s2, count, ivar) = (&s1, &s2, &count, &ivar);
                let (assign, xhat, gamma_c) = (&assign, &xhat, &gamma_c);
                dx.par_chunks_mut(c * plane).enumerate().for_each(|(ni, dx_n)| {
                    let base = ni * c * plane;
                    for idx in 0..c * plane {
                        let ci = idx / plane;
                        let kc = assign[base + idx] as usize * c + ci;
                        let mk = S::from_f64(count[kc] as f64);
                        let scale = gamma_c.data()[kc] * ivar[kc];
                        dx_n[idx] = scale
                            * (dy[base + idx] - s1[kc] / mk - xhat[base + idx] * s2[kc] / mk);
                    }
                });
            }
            vec![Some(dx), Some(s2), Some(s1)]
        }),
        "mode_norm",
    )
}

fn mode_norm_eval<S: Scalar>(
    x: &Tensor<S>,
    state: &MixtureState<S>,
    affine: &AffineParams<S>,
    cfg: &NormConfig,
) -> Result<Tensor<S>> {
    let k = state.modes;
    let (n, c, h, w) = check_norm_shapes(x, state.channels, affine, Some(k))?;
    let plane = h * w;
    let eps = S::from_f64(cfg.epsilon);
    let assign = Arc::new(assign_modes(x, state, cfg, true)?);
    let ivar: Vec<S> = state
        .running_var
        .iter()
        .map(|&v| S::ONE / (v + eps).sqrt())
        .collect();

    let xd = x.data();
    let mut xhat = vec![S::ZERO; x.numel()];
    let mut y = vec![S::ZERO; x.numel()];
    {
        let gamma = affine.gamma.data();
        let beta = affine.beta.data();
        let (assign, ivar, running_mu) = (&assign, &ivar, &state.running_mu);
        y.par_chunks_mut(c * plane)
            .zip(xhat.par_chunks_mut(c * plane))
            .zip(xd.par_chunks(c * plane))
            .enumerate()
            .for_each(|(ni, ((y_n, xh_n), x_n))| {
                let a_n = &assign[ni * c * plane..(ni + 1) * c * plane];
                for idx in 0..c * plane {
                    let ci = idx / plane;
                    let kc = a_n[idx] as usize * c + ci;
                    let xh = (x_n[idx] - running_mu[kc]) * ivar[kc];
                    xh_n[idx] = xh;
                    y_n[idx] = gamma[kc] * xh + beta[kc];
                }
            });
    }
    let xhat = Arc::new(xhat);
    let gamma_c = affine.gamma.clone();
    let shape = x.shape().clone();
    Tensor::from_op(
        y,
        shape,
        vec![x.clone(), affine.gamma.clone(), affine.beta.clone()],
        Box::new(move |dy| {
            let mut dgamma = vec![S::ZERO; k * c];
            let mut dbeta = vec![S::ZERO; k * c];
            let mut dx = vec![S::ZERO; dy.len()];
            for ni in 0..n {
                for ci in 0..c {
                    let base = (ni * c + ci) * plane;
                    for j in 0..plane {
                        let kc = assign[base + j] as usize * c + ci;
                        dgamma[kc] += dy[base + j] * xhat[base + j];
                        dbeta[kc] += dy[base + j];
                        dx[base + j] = dy[base + j] * gamma_c.data()[kc] * ivar[kc];
                    }
                }
            }
            vec![Some(dx), Some(dgamma), Some(dbeta)]
        }),
        "mode_norm",
    )
}

/// Normalization layer state, dispatching on the configured kind.
pub enum NormState<S: Scalar> {
    None,
    Batch(BatchStats<S>),
    Mode(MixtureState<S>),
}

pub struct NormLayer<S: Scalar> {
    pub cfg: NormConfig,
    pub channels: usize,
    pub affine: Option<AffineParams<S>>,
    pub state: NormState<S>,
}

impl<S: Scalar> NormLayer<S> {
    pub fn new(cfg: NormConfig, channels: usize) -> Result<Self> {
        cfg.validate()?;
        let (affine, state) = match cfg.kind {
            NormKind::None => (None, NormState::None),
            NormKind::Batch => (
                Some(AffineParams::new(1, channels)),
                NormState::Batch(BatchStats::new(channels)),
            ),
            NormKind::Mode => (
                Some(AffineParams::new(cfg.modes, channels)),
                NormState::Mode(MixtureState::empty(cfg.modes, channels)),
            ),
        };
        Ok(NormLayer {
            cfg,
            channels,
            affine,
            state,
        })
    }

    pub fn forward(&mut self, x: &Tensor<S>, training: bool) -> Result<Tensor<S>> {
        match (&mut self.state, &mut self.affine) {
            (NormState::None, _) => Ok(x.clone()),
            (NormState::Batch(stats), Some(affine)) => {
                batch_norm_forward(x, stats, affine, &self.cfg, training)
            }
            (NormState::Mode(state), Some(affine)) => {
                mode_norm_forward(x, state, affine, &self.cfg, training)
            }
            _ => Err(Error::Contract("norm layer missing affine parameters".into())),
        }
    }

    /// Inference forward usable from a shared reference (frozen layer).
    pub fn forward_frozen(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        match (&self.state, &self.affine) {
            (NormState::None, _) => Ok(x.clone()),
            (NormState::Batch(stats), Some(affine)) => {
                batch_norm_eval(x, stats, affine, &self.cfg)
            }
            (NormState::Mode(state), Some(affine)) => {
                mode_norm_eval(x, state, affine, &self.cfg)
            }
            _ => Err(Error::Contract("norm layer missing affine parameters".into())),
        }
    }
}
