//! Truncated diffusion purification.
//!
//! A linear variance schedule defines the closed-form forward process
//! x_t = sqrt(ab_t) x_0 + sqrt(1 - ab_t) eps. A noise estimator is trained on
//! clean windows (no labels, no attacked data) to predict eps from (x_t, t).
//! Purification noises a window up to the truncation step T* and walks back
//! down an S-step tau grid with deterministic implicit (sigma = 0) steps, so
//! the whole procedure is a pure function of (x, seed).

use crate::data::{Dataset, PmuWindow, SplitKind, NUM_CHANNELS};
use crate::error::{Error, Result};
use crate::nn::{LayerSpec, Network, OptimizerState};
use crate::rng::{self, Stream};
use crate::tensor::Tensor;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Variance schedule: beta[1..T], alpha_t = 1 - beta_t, and cumulative
/// products ab_t with ab_0 = 1.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    betas: Vec<f64>,      // betas[t-1] = beta_t
    alpha_bars: Vec<f64>, // alpha_bars[t] = prod_{s<=t} (1 - beta_s), index 0 = 1
}

impl NoiseSchedule {
    pub fn from_betas(betas: Vec<f64>) -> Result<Self> {
        if betas.len() < 2 {
            return Err(Error::config("schedule needs T >= 2"));
        }
        let mut alpha_bars = Vec::with_capacity(betas.len() + 1);
        alpha_bars.push(1.0);
        let mut prod = 1.0;
        let mut prev_beta = 0.0;
        for (i, &b) in betas.iter().enumerate() {
            if !(b > 0.0 && b < 1.0) {
                return Err(Error::config(format!("beta_{} = {b} outside (0, 1)", i + 1)));
            }
            if b < prev_beta {
                return Err(Error::config("betas must be nondecreasing"));
            }
            prev_beta = b;
            prod *= 1.0 - b;
            alpha_bars.push(prod);
        }
        Ok(NoiseSchedule { betas, alpha_bars })
    }

    pub fn t_max(&self) -> usize {
        self.betas.len()
    }

    /// beta_t for t in 1..=T.
    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        1.0 - self.betas[t - 1]
    }

    /// Cumulative product ab_t for t in 0..=T; ab_0 = 1.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bars[t]
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }
}

/// Linear beta ramp from `beta_start` to `beta_end` over T steps.
pub fn linear_schedule(t_max: usize, beta_start: f64, beta_end: f64) -> Result<NoiseSchedule> {
    if t_max < 2 {
        return Err(Error::config("linear schedule needs T >= 2"));
    }
    if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
        return Err(Error::config(format!(
            "invalid beta range [{beta_start}, {beta_end}]"
        )));
    }
    let step = (beta_end - beta_start) / (t_max - 1) as f64;
    let betas = (0..t_max).map(|i| beta_start + step * i as f64).collect();
    NoiseSchedule::from_betas(betas)
}

/// Closed-form forward process: x_t = sqrt(ab_t) x0 + sqrt(1 - ab_t) eps.
pub fn forward_diffuse(x0: &Tensor, t: usize, eps: &Tensor, sched: &NoiseSchedule) -> Result<Tensor> {
    if t < 1 || t > sched.t_max() {
        return Err(Error::usage(format!(
            "forward step t = {t} outside 1..={}",
            sched.t_max()
        )));
    }
    if eps.shape() != x0.shape() {
        return Err(Error::config("noise shape does not match the sample"));
    }
    let ab = sched.alpha_bar(t);
    Ok(x0.scale(ab.sqrt()).add(&eps.scale((1.0 - ab).sqrt())))
}

/// Anything that predicts the forward noise from (x_t, t). Trained networks
/// implement this; tests substitute oracles that return the true noise.
pub trait NoiseEstimator: Sync {
    fn estimate_noise(&self, x_t: &Tensor, t: usize) -> Result<Tensor>;
}

impl NoiseEstimator for Network {
    fn estimate_noise(&self, x_t: &Tensor, t: usize) -> Result<Tensor> {
        self.infer(x_t, Some(t as f64))
    }
}

/// One deterministic implicit backward step from `t_from` down to `t_to`:
/// reconstruct x0_hat from the estimated noise, then re-noise it to `t_to`
/// with the same estimate (sigma = 0, no stochastic term).
pub fn ddim_step(
    x_t: &Tensor,
    t_from: usize,
    t_to: usize,
    estimator: &dyn NoiseEstimator,
    sched: &NoiseSchedule,
) -> Result<Tensor> {
    if t_to >= t_from || t_from > sched.t_max() {
        return Err(Error::usage(format!(
            "ddim step needs 0 <= t_to < t_from <= {}, got {t_from} -> {t_to}",
            sched.t_max()
        )));
    }
    let eps_hat = estimator.estimate_noise(x_t, t_from)?;
    if eps_hat.shape() != x_t.shape() {
        return Err(Error::config("estimator output shape mismatch"));
    }
    let ab_from = sched.alpha_bar(t_from);
    let ab_to = sched.alpha_bar(t_to);
    let x0_hat = x_t
        .sub(&eps_hat.scale((1.0 - ab_from).sqrt()))
        .scale(1.0 / ab_from.sqrt());
    Ok(x0_hat.scale(ab_to.sqrt()).add(&eps_hat.scale((1.0 - ab_to).sqrt())))
}

/// Integer backward grid [0, T*/S, 2 T*/S, ..., T*]: the ideal real grid
/// rounded to nearest integers, deduplicated with both endpoints kept.
pub fn make_tau_grid(t_star: usize, s: usize) -> Result<Vec<usize>> {
    if s < 1 || s > t_star {
        return Err(Error::config(format!(
            "backward steps S = {s} must satisfy 1 <= S <= T* = {t_star}"
        )));
    }
    let mut grid = Vec::with_capacity(s + 1);
    for i in 0..=s {
        let ideal = i as f64 * t_star as f64 / s as f64;
        let rounded = ideal.round() as usize;
        if grid.last() != Some(&rounded) {
            grid.push(rounded);
        }
    }
    debug_assert_eq!(grid.first(), Some(&0));
    debug_assert_eq!(grid.last(), Some(&t_star));
    Ok(grid)
}

/// Purification hyperparameters; `tau` is precomputed and strictly
/// increasing from 0 to `t_star`. `effective_s` can be smaller than the
/// requested S when rounding collapses grid points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PurifyConfig {
    pub t_star: usize,
    pub requested_s: usize,
    pub tau: Vec<usize>,
    pub seed: u64,
}

impl PurifyConfig {
    pub fn new(t_star: usize, s: usize, seed: u64) -> Result<Self> {
        let tau = make_tau_grid(t_star, s)?;
        Ok(PurifyConfig {
            t_star,
            requested_s: s,
            tau,
            seed,
        })
    }

    pub fn effective_s(&self) -> usize {
        self.tau.len() - 1
    }

    pub fn validate(&self, sched: &NoiseSchedule) -> Result<()> {
        if self.t_star > sched.t_max() {
            return Err(Error::config(format!(
                "T* = {} exceeds schedule T = {}",
                self.t_star,
                sched.t_max()
            )));
        }
        if self.tau.first() != Some(&0)
            || self.tau.last() != Some(&self.t_star)
            || !self.tau.windows(2).all(|w| w[0] < w[1])
        {
            return Err(Error::config(format!("invalid tau grid {:?}", self.tau)));
        }
        Ok(())
    }
}

/// Truncated forward/backward purification of one window. The forward noise
/// comes from `seed`, the backward pass is noiseless, so the output is a
/// deterministic function of (x, seed).
pub fn purify_values(
    values: &Tensor,
    estimator: &dyn NoiseEstimator,
    sched: &NoiseSchedule,
    pcfg: &PurifyConfig,
    seed: u64,
) -> Result<Tensor> {
    pcfg.validate(sched)?;
    let mut rng = rng::rng_for(seed, Stream::PurifyNoise, 0);
    let eps = rng::gaussian_tensor(values.shape().to_vec(), &mut rng);
    let mut x = forward_diffuse(values, pcfg.t_star, &eps, sched)?;
    for pair in pcfg.tau.windows(2).rev() {
        x = ddim_step(&x, pair[1], pair[0], estimator, sched)?;
    }
    Ok(x)
}

pub fn purify(
    window: &PmuWindow,
    estimator: &dyn NoiseEstimator,
    sched: &NoiseSchedule,
    pcfg: &PurifyConfig,
) -> Result<PmuWindow> {
    let values = purify_values(window.values(), estimator, sched, pcfg, pcfg.seed)?;
    window.with_values(values)
}

/// Purify a batch with per-sample seeds derived from the config seed;
/// order-stable and bit-identical however the work is scheduled.
pub fn purify_batch(
    windows: &[&PmuWindow],
    estimator: &dyn NoiseEstimator,
    sched: &NoiseSchedule,
    pcfg: &PurifyConfig,
) -> Result<Vec<PmuWindow>> {
    windows
        .par_iter()
        .enumerate()
        .map(|(i, w)| {
            let seed = rng::derive_seed(pcfg.seed, Stream::PurifyNoise, i as u64);
            let values = purify_values(w.values(), estimator, sched, pcfg, seed)?;
            w.with_values(values)
        })
        .collect()
}

/// Per-step diagnostic constants for the backward-contraction analysis:
/// c_eps = 1/sqrt(ab_from) - sqrt(1-ab_to)/sqrt(1-ab_from), and
/// c_t scales the estimator-deviation bound relative to c_eps.
pub fn theorem2_constants(sched: &NoiseSchedule, t_from: usize, t_to: usize) -> (f64, f64) {
    let ab_from = sched.alpha_bar(t_from);
    let ab_to = sched.alpha_bar(t_to);
    let ratio = ((1.0 - ab_to) / (1.0 - ab_from)).sqrt();
    let c_eps = 1.0 / ab_from.sqrt() - ratio;
    let c_t = (1.0 - ratio) / c_eps;
    (c_eps, c_t)
}

/// Noise-estimator architecture and training settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EstimatorConfig {
    pub embed_dim: usize,
    pub hidden_channels: usize,
    pub kernel: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        EstimatorConfig {
            embed_dim: 32,
            hidden_channels: 96,
            kernel: 5,
            epochs: 60,
            batch_size: 32,
            learning_rate: 1e-3,
            seed: 2,
        }
    }
}

/// conv -> relu -> time embedding -> conv -> relu -> conv back to the input
/// channel count. The final layer starts at zero, so an untrained estimator
/// is exactly the zero predictor.
pub fn build_estimator(window_len: usize, num_pmus: usize, cfg: &EstimatorConfig) -> Result<Network> {
    let channels = num_pmus * NUM_CHANNELS;
    let mut net = Network::new(
        vec![window_len, num_pmus, NUM_CHANNELS],
        vec![
            LayerSpec::Reshape {
                shape: vec![window_len, channels],
            },
            LayerSpec::Conv1dTime {
                kernel: cfg.kernel,
                channels: cfg.hidden_channels,
            },
            LayerSpec::Relu,
            LayerSpec::TimeEmbeddingAdd {
                embed_dim: cfg.embed_dim,
            },
            LayerSpec::Conv1dTime {
                kernel: cfg.kernel,
                channels: cfg.hidden_channels,
            },
            LayerSpec::Relu,
            LayerSpec::Conv1dTime {
                kernel: cfg.kernel,
                channels,
            },
            LayerSpec::Reshape {
                shape: vec![window_len, num_pmus, NUM_CHANNELS],
            },
        ],
        cfg.seed,
    )?;
    net.zero_final_params();
    Ok(net)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EstimatorEpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

/// Mean squared error per element between true and estimated noise. A zero
/// predictor scores 1.0 in expectation, which makes it the natural baseline.
fn noise_loss(eps: &Tensor, eps_hat: &Tensor) -> (f64, Tensor) {
    let n = eps.len() as f64;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(eps.len());
    for (&e, &p) in eps.data().iter().zip(eps_hat.data()) {
        let d = p - e;
        loss += d * d;
        grad.push(2.0 * d / n);
    }
    (loss / n, Tensor::from_raw(eps.shape().to_vec(), grad))
}

/// Train the noise estimator on the clean training split (no labels, no
/// attacked data): per sample draw t ~ U{1..T} and eps ~ N(0, I), form x_t,
/// and regress the estimate onto eps. Validation uses draws fixed once per
/// val sample, so epochs are comparable; the best-validation parameters are
/// returned. Deterministic given the config seed.
pub fn train_noise_estimator(
    ds: &Dataset,
    sched: &NoiseSchedule,
    cfg: &EstimatorConfig,
) -> Result<(Network, Vec<EstimatorEpochStats>)> {
    if !ds.normalized {
        return Err(Error::usage("estimator training expects a normalized dataset"));
    }
    let train = ds.split_samples(SplitKind::Train)?;
    let val = ds.split_samples(SplitKind::Val)?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::usage("estimator training needs train and val splits"));
    }
    let (w, k) = train[0].0.dims();
    let mut net = build_estimator(w, k, cfg)?;
    let mut opt = OptimizerState::adam(cfg.learning_rate);

    // Fixed validation draws: (t_i, eps_i) per val sample.
    let val_draws: Vec<(usize, Tensor)> = (0..val.len())
        .map(|i| {
            let mut rng = rng::rng_for(cfg.seed, Stream::DiffusionTrain, u64::MAX - i as u64);
            let t = rng.random_range(1..=sched.t_max());
            let eps = rng::gaussian_tensor(val[i].0.values().shape().to_vec(), &mut rng);
            (t, eps)
        })
        .collect();

    let n = train.len();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, Vec<Tensor>)> = None;
    for epoch in 0..cfg.epochs {
        let mut shuffle_rng = rng::rng_for(cfg.seed, Stream::TrainShuffle, 1_000_000 + epoch as u64);
        let order = rng::shuffled_indices(n, &mut shuffle_rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size.max(1)) {
            let results: Vec<Result<(Vec<Tensor>, f64)>> = batch
                .par_iter()
                .map(|&idx| {
                    let x0 = train[idx].0.values();
                    let mut draw_rng = rng::rng_for(
                        cfg.seed,
                        Stream::DiffusionTrain,
                        (epoch * n + idx) as u64,
                    );
                    let t = draw_rng.random_range(1..=sched.t_max());
                    let eps = rng::gaussian_tensor(x0.shape().to_vec(), &mut draw_rng);
                    let x_t = forward_diffuse(x0, t, &eps, sched)?;
                    let (eps_hat, cache) = net.forward_with_time(&x_t, Some(t as f64))?;
                    let (loss, out_grad) = noise_loss(&eps, &eps_hat);
                    let (param_grads, _) = net.backward(&cache, &out_grad)?;
                    Ok((param_grads, loss))
                })
                .collect();
            let mut sum_grads: Vec<Tensor> = net.params().iter().map(Tensor::zeros_like).collect();
            let mut batch_loss = 0.0;
            for r in results {
                let (grads, loss) = r.map_err(|e| Error::Training {
                    epoch,
                    detail: e.to_string(),
                })?;
                for (acc, g) in sum_grads.iter_mut().zip(&grads) {
                    for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                        *a += b;
                    }
                }
                batch_loss += loss;
            }
            if !batch_loss.is_finite() {
                return Err(Error::Training {
                    epoch,
                    detail: "noise-estimator loss diverged to NaN/inf".to_string(),
                });
            }
            let scale = 1.0 / batch.len() as f64;
            for g in &mut sum_grads {
                for v in g.data_mut() {
                    *v *= scale;
                }
            }
            let mut params: Vec<Tensor> = net.params().to_vec();
            opt.step(&mut params, &sum_grads)
                .and_then(|_| net.set_params(params))
                .map_err(|e| Error::Training {
                    epoch,
                    detail: e.to_string(),
                })?;
            epoch_loss += batch_loss;
        }
        let train_loss = epoch_loss / n as f64;
        let val_loss = estimator_validation_loss(&net, &val, &val_draws, sched)?;
        history.push(EstimatorEpochStats {
            epoch,
            train_loss,
            val_loss,
        });
        if best.as_ref().map_or(true, |(l, _)| val_loss < *l) {
            best = Some((val_loss, net.params().to_vec()));
        }
    }
    if let Some((_, params)) = best {
        net.set_params(params)?;
    }
    Ok((net, history))
}

fn estimator_validation_loss(
    net: &Network,
    val: &[&(PmuWindow, crate::data::EventClass)],
    draws: &[(usize, Tensor)],
    sched: &NoiseSchedule,
) -> Result<f64> {
    let losses: Vec<Result<f64>> = val
        .par_iter()
        .zip(draws.par_iter())
        .map(|((window, _), (t, eps))| {
            let x_t = forward_diffuse(window.values(), *t, eps, sched)?;
            let eps_hat = net.infer(&x_t, Some(*t as f64))?;
            Ok(noise_loss(eps, &eps_hat).0)
        })
        .collect();
    let mut sum = 0.0;
    for l in losses {
        sum += l?;
    }
    Ok(sum / val.len() as f64)
}

#[cfg(test)]
mod diffusion_tests;
