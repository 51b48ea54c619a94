//! Streaming per-window latency benchmark across PMU-fleet sizes.
//!
//! Per-purifier parallelism mirrors a streaming deployment: feature
//! squeezing and low-pass filtering fan out per PMU, the decomposition
//! methods per channel, and diffusion runs its estimator inference on the
//! whole window at once. Absolute times are recorded but only the scaling
//! shape is meant to be compared across machines.

use crate::baselines::{
    butter_design, event_participation_channel, feature_squeeze, lowpass_filter,
    svd_truncate_channel,
};
use crate::config::{DiffusionSection, PurifiersSection};
use crate::data::{generate_dataset, per_channel_min_max, GenConfig, PmuWindow, NUM_CHANNELS};
use crate::diffusion::{build_estimator, linear_schedule, purify_values, PurifyConfig};
use crate::error::{Error, Result};
use crate::eval::channel_matrix;
use crate::rng;
use crate::tensor::Tensor;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::time::Instant;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyRow {
    pub purifier: String,
    pub pmu_count: usize,
    pub mean_ms: f64,
    pub std_ms: f64,
    pub reps: usize,
    pub workers: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyTable {
    pub rows: Vec<LatencyRow>,
    pub window_len: usize,
    pub warmup: usize,
}

/// Benchmark each configured purifier across the PMU counts. Windows and
/// (untrained) estimators are synthesized per count; an untrained estimator
/// costs exactly as much as a trained one.
pub fn run_latency_bench(
    purifiers: &PurifiersSection,
    diffusion: &DiffusionSection,
    pmu_counts: &[usize],
    window_len: usize,
    reps: usize,
    warmup: usize,
) -> Result<LatencyTable> {
    if reps < 30 {
        return Err(Error::config("latency reps must be >= 30"));
    }
    if pmu_counts.is_empty() {
        return Err(Error::config("no PMU counts to benchmark"));
    }
    let schedule = linear_schedule(diffusion.timesteps, diffusion.beta_start, diffusion.beta_end)?;
    let pcfg = PurifyConfig::new(diffusion.truncation_step, diffusion.backward_steps, 11)?;
    let workers = rayon::current_num_threads();

    let mut rows = Vec::new();
    for name in &purifiers.list {
        for &k in pmu_counts {
            let gen = GenConfig {
                window_len,
                num_pmus: k,
                samples_per_class: 1,
                seed: 1234 + k as u64,
                ..GenConfig::default()
            };
            let ds = generate_dataset(&gen)?;
            let window = ds.samples[0].0.clone();
            let all: Vec<&PmuWindow> = ds.samples.iter().map(|(w, _)| w).collect();
            let ranges = per_channel_min_max(&all);
            let op: Box<dyn Fn() -> Result<()>> = match name.as_str() {
                "none" => Box::new(|| Ok(())),
                "feature_squeezing" => {
                    let w = window.clone();
                    Box::new(move || per_pmu(&w, |p| feature_squeeze(p, purifiers.squeeze_bits, purifiers.squeeze_window, &ranges)))
                }
                "lowpass" => {
                    let filt = butter_design(
                        purifiers.lowpass_order,
                        purifiers.lowpass_fc_hz,
                        window.sample_rate_hz(),
                    )?;
                    let w = window.clone();
                    Box::new(move || per_pmu(&w, |p| Ok(lowpass_filter(p, &filt))))
                }
                "svd" => {
                    let rank = purifiers.svd_rank.min(window_len.min(k));
                    let w = window.clone();
                    Box::new(move || per_channel(&w, |m| svd_truncate_channel(m, rank)))
                }
                "event_decomposition" => {
                    let w = window.clone();
                    Box::new(move || per_channel(&w, event_participation_channel))
                }
                "diffusion" => {
                    let estimator =
                        build_estimator(window_len, k, &diffusion.estimator)?;
                    let sched = schedule.clone();
                    let p = pcfg.clone();
                    let w = window.clone();
                    Box::new(move || {
                        purify_values(w.values(), &estimator, &sched, &p, 5).map(|_| ())
                    })
                }
                other => return Err(Error::config(format!("unknown purifier {other:?}"))),
            };

            for _ in 0..warmup {
                op()?;
            }
            let mut times_ms = Vec::with_capacity(reps);
            for _ in 0..reps {
                let start = Instant::now();
                op()?;
                times_ms.push(start.elapsed().as_secs_f64() * 1e3);
            }
            let (mean_ms, std_ms) = super::mean_std(&times_ms);
            rows.push(LatencyRow {
                purifier: name.clone(),
                pmu_count: k,
                mean_ms,
                std_ms,
                reps,
                workers,
            });
        }
    }
    Ok(LatencyTable {
        rows,
        window_len,
        warmup,
    })
}

/// Fan one window out per PMU ([W, 1, 4] slices) and process independently.
fn per_pmu(
    window: &PmuWindow,
    op: impl Fn(&PmuWindow) -> Result<PmuWindow> + Sync,
) -> Result<()> {
    let (w, k) = window.dims();
    let slices: Vec<PmuWindow> = (0..k)
        .map(|pmu| {
            let mut data = vec![0.0; w * NUM_CHANNELS];
            for t in 0..w {
                for c in 0..NUM_CHANNELS {
                    data[t * NUM_CHANNELS + c] =
                        window.values().data()[window.values().idx3(t, pmu, c)];
                }
            }
            PmuWindow::new(
                Tensor::from_raw(vec![w, 1, NUM_CHANNELS], data),
                window.sample_rate_hz(),
            )
            .expect("slice is a valid window")
        })
        .collect();
    let results: Result<Vec<PmuWindow>> = slices.par_iter().map(&op).collect();
    results.map(|_| ())
}

/// Fan one window out per measurement channel ([W, K] matrices).
fn per_channel(window: &PmuWindow, op: impl Fn(&Tensor) -> Result<Tensor> + Sync) -> Result<()> {
    let channels: Vec<Tensor> = (0..NUM_CHANNELS).map(|c| channel_matrix(window, c)).collect();
    let results: Result<Vec<Tensor>> = channels.par_iter().map(&op).collect();
    results.map(|_| ())
}

/// Synthesize a normalized-ish witness window for ad-hoc benchmarks.
pub fn witness_window(window_len: usize, num_pmus: usize, seed: u64) -> PmuWindow {
    let mut r = rng::rng_for(seed, rng::Stream::DataGen, 999);
    PmuWindow::new(
        rng::gaussian_tensor(vec![window_len, num_pmus, NUM_CHANNELS], &mut r),
        30.0,
    )
    .expect("witness window")
}
