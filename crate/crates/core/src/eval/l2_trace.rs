//! L2 distance between clean and attacked samples along the purification
//! trajectory: one initial row, one forward-arrival row (hard-checked
//! against the exact sqrt(ab_T*) scaling), and one row per backward step
//! with the per-step diagnostic constants.

use super::f1_grid::{check_norm_stats, schedule_from_extra};
use super::{l2_distance, mean_std, ExperimentPlan};
use crate::attacks::AttackKind;
use crate::data::{load_dataset, normalize, SplitKind};
use crate::diffusion::{
    ddim_step, forward_diffuse, make_tau_grid, theorem2_constants, NoiseEstimator,
};
use crate::error::{Error, Result};
use crate::nn::load_network;
use crate::rng::{self, Stream};
use crate::tensor::Tensor;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct L2TraceStep {
    pub label: String,
    pub t_index: usize,
    pub mean_l2: f64,
    pub std_l2: f64,
    pub c_eps_t: Option<f64>,
    pub c_t: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct L2Trace {
    pub attack: String,
    pub steps: Vec<L2TraceStep>,
    /// Fraction of (sample, step) pairs where the distance grew, and the
    /// largest relative growth seen.
    pub violation_fraction: f64,
    pub max_violation_rel: f64,
}

/// Trace the mean/std L2 distance between each clean test window and its
/// attacked twin through purification, sharing the forward noise within
/// each pair. The forward arrival is asserted to equal sqrt(ab_T*) times
/// the initial distance to within 1e-9 relative, per sample.
pub fn run_l2_trace(plan: &ExperimentPlan, attack: AttackKind) -> Result<L2Trace> {
    plan.validate()?;
    let ds = normalize(&load_dataset(&plan.dataset_dir)?)?;
    let (estimator, est_extra) = load_network(&plan.estimator_dir)?;
    check_norm_stats(&ds, &est_extra, "noise estimator")?;
    let schedule = schedule_from_extra(&est_extra)?;
    let dir = plan
        .attacked_dirs
        .iter()
        .find(|(k, _)| *k == attack)
        .map(|(_, d)| d.clone())
        .ok_or_else(|| Error::usage(format!("no attacked dataset for {}", attack.name())))?;
    let attacked = load_dataset(&dir)?;

    let test = ds.split_samples(SplitKind::Test)?;
    if attacked.len() != test.len() {
        return Err(Error::usage(format!(
            "attacked set has {} samples, test split has {}",
            attacked.len(),
            test.len()
        )));
    }
    let t_star = plan.truncation_step;
    let tau = make_tau_grid(t_star, plan.backward_steps)?;

    // Per-sample trajectories: distances at [initial, forward, backward...].
    let per_sample: Vec<Result<Vec<f64>>> = test
        .par_iter()
        .zip(attacked.samples.par_iter())
        .enumerate()
        .map(|(i, ((clean, _), (adv, _)))| {
            let x = clean.values();
            let x_adv = adv.values();
            let d0 = l2_distance(x, x_adv);
            // Shared forward noise per pair.
            let seed = rng::derive_seed(plan.purify_seed, Stream::PurifyNoise, i as u64);
            let mut noise_rng = rng::rng_for(seed, Stream::PurifyNoise, 0);
            let eps = rng::gaussian_tensor(x.shape().to_vec(), &mut noise_rng);
            let mut xt = forward_diffuse(x, t_star, &eps, &schedule)?;
            let mut xt_adv = forward_diffuse(x_adv, t_star, &eps, &schedule)?;
            let d_fwd = l2_distance(&xt, &xt_adv);
            let want = schedule.alpha_bar(t_star).sqrt() * d0;
            if (d_fwd - want).abs() > 1e-9 * want.max(1e-300) {
                return Err(Error::usage(format!(
                    "sample {i}: forward distance {d_fwd} violates the exact scaling {want}"
                )));
            }
            let mut distances = vec![d0, d_fwd];
            for pair in tau.windows(2).rev() {
                xt = ddim_step(&xt, pair[1], pair[0], &estimator as &dyn NoiseEstimator, &schedule)?;
                xt_adv =
                    ddim_step(&xt_adv, pair[1], pair[0], &estimator as &dyn NoiseEstimator, &schedule)?;
                distances.push(l2_distance(&xt, &xt_adv));
            }
            Ok(distances)
        })
        .collect();

    let mut trajectories = Vec::with_capacity(test.len());
    for r in per_sample {
        trajectories.push(r?);
    }
    build_trace(attack, &trajectories, &tau, t_star, &schedule)
}

fn build_trace(
    attack: AttackKind,
    trajectories: &[Vec<f64>],
    tau: &[usize],
    t_star: usize,
    schedule: &crate::diffusion::NoiseSchedule,
) -> Result<L2Trace> {
    let n_steps = 2 + (tau.len() - 1);
    let mut steps = Vec::with_capacity(n_steps);
    let column = |k: usize| -> Vec<f64> { trajectories.iter().map(|t| t[k]).collect() };

    let (mean, std) = mean_std(&column(0));
    steps.push(L2TraceStep {
        label: "initial".to_string(),
        t_index: 0,
        mean_l2: mean,
        std_l2: std,
        c_eps_t: None,
        c_t: None,
    });
    let (mean, std) = mean_std(&column(1));
    steps.push(L2TraceStep {
        label: "forward_arrival".to_string(),
        t_index: t_star,
        mean_l2: mean,
        std_l2: std,
        c_eps_t: None,
        c_t: None,
    });
    for (step_idx, pair) in tau.windows(2).rev().enumerate() {
        let (mean, std) = mean_std(&column(2 + step_idx));
        let (c_eps, c_t) = theorem2_constants(schedule, pair[1], pair[0]);
        steps.push(L2TraceStep {
            label: format!("backward_{}", step_idx + 1),
            t_index: pair[0],
            mean_l2: mean,
            std_l2: std,
            c_eps_t: Some(c_eps),
            c_t: Some(c_t),
        });
    }

    // Per-(sample, step) growth bookkeeping over the whole trajectory.
    let mut violations = 0usize;
    let mut total = 0usize;
    let mut max_rel = 0.0f64;
    for traj in trajectories {
        for pair in traj.windows(2) {
            total += 1;
            if pair[1] > pair[0] {
                violations += 1;
                if pair[0] > 0.0 {
                    max_rel = max_rel.max((pair[1] - pair[0]) / pair[0]);
                }
            }
        }
    }
    Ok(L2Trace {
        attack: attack.name().to_string(),
        steps,
        violation_fraction: if total == 0 {
            0.0
        } else {
            violations as f64 / total as f64
        },
        max_violation_rel: max_rel,
    })
}

/// Soft idempotence diagnostic: mean L2 of purify(purify(x)) - purify(x)
/// versus purify(x) - x over clean windows. Logged, not asserted.
pub fn idempotence_gap(
    windows: &[&crate::data::PmuWindow],
    estimator: &dyn NoiseEstimator,
    schedule: &crate::diffusion::NoiseSchedule,
    pcfg: &crate::diffusion::PurifyConfig,
) -> Result<(f64, f64)> {
    let mut first = 0.0;
    let mut second = 0.0;
    for (i, w) in windows.iter().enumerate() {
        let seed = rng::derive_seed(pcfg.seed, Stream::PurifyNoise, i as u64);
        let once = crate::diffusion::purify_values(w.values(), estimator, schedule, pcfg, seed)?;
        let twice = crate::diffusion::purify_values(&once, estimator, schedule, pcfg, seed + 1)?;
        first += l2_distance(&once, w.values());
        second += sub_norm(&twice, &once);
    }
    let n = windows.len() as f64;
    Ok((first / n, second / n))
}

fn sub_norm(a: &Tensor, b: &Tensor) -> f64 {
    a.sub(b).l2_norm()
}
