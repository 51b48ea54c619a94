//! The purifier x attack macro-F1 grid.

use super::{build_purifiers, training_ranges, ExperimentPlan, Purifier};
use crate::classifier::{argmax, macro_f1, predict};
use crate::data::{load_dataset, normalize, PmuWindow, SplitKind};
use crate::diffusion::{linear_schedule, PurifyConfig};
use crate::error::{Error, Result};
use crate::nn::{load_network, Network};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::sync::Arc;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct F1Cell {
    pub purifier: String,
    pub attack: String,
    pub f1: f64,
}

/// Evaluate macro-F1 of the classifier on (purified) clean and attacked test
/// data: rows are purifiers (including "none"), columns are "original" plus
/// each attack. Deterministic given the plan seeds.
pub fn run_f1_grid(plan: &ExperimentPlan) -> Result<Vec<F1Cell>> {
    plan.validate()?;
    let ds = normalize(&load_dataset(&plan.dataset_dir)?)?;
    let (classifier, clf_extra) = load_network(&plan.classifier_dir)?;
    let (estimator, est_extra) = load_network(&plan.estimator_dir)?;
    check_norm_stats(&ds, &clf_extra, "classifier")?;
    check_norm_stats(&ds, &est_extra, "noise estimator")?;
    let schedule = schedule_from_extra(&est_extra)?;

    let test = ds.split_samples(SplitKind::Test)?;
    let labels: Vec<usize> = test.iter().map(|(_, l)| l.index()).collect();
    let clean: Vec<PmuWindow> = test.iter().map(|(w, _)| w.clone()).collect();

    // Columns: original + one per attacked dataset, loaded up front.
    let mut columns: Vec<(String, Vec<PmuWindow>)> = vec![("original".to_string(), clean)];
    for (kind, dir) in &plan.attacked_dirs {
        let attacked = load_dataset(dir)?;
        if attacked.len() != labels.len() {
            return Err(Error::usage(format!(
                "attacked set {} has {} samples, test split has {}",
                kind.name(),
                attacked.len(),
                labels.len()
            )));
        }
        let windows: Vec<PmuWindow> = attacked.samples.into_iter().map(|(w, _)| w).collect();
        columns.push((kind.name().to_string(), windows));
    }

    let pcfg = PurifyConfig {
        t_star: plan.truncation_step,
        requested_s: plan.backward_steps,
        tau: crate::diffusion::make_tau_grid(plan.truncation_step, plan.backward_steps)?,
        seed: plan.purify_seed,
    };
    pcfg.validate(&schedule)?;
    let purifiers = build_purifiers(
        &plan.purifiers,
        &training_ranges(&ds)?,
        ds.samples[0].0.sample_rate_hz(),
        Some((Arc::new(estimator), schedule, pcfg)),
    )?;

    let mut cells = Vec::with_capacity(purifiers.len() * columns.len());
    for purifier in &purifiers {
        for (attack_name, windows) in &columns {
            let f1 = grid_cell(&classifier, purifier, windows, &labels)?;
            cells.push(F1Cell {
                purifier: purifier.name().to_string(),
                attack: attack_name.clone(),
                f1,
            });
        }
    }
    Ok(cells)
}

fn grid_cell(
    classifier: &Network,
    purifier: &Purifier,
    windows: &[PmuWindow],
    labels: &[usize],
) -> Result<f64> {
    let preds: Vec<usize> = windows
        .par_iter()
        .enumerate()
        .map(|(i, w)| -> Result<usize> {
            let purified = purifier.apply(w, i as u64)?;
            Ok(argmax(&predict(classifier, &purified)?))
        })
        .collect::<Result<Vec<usize>>>()?;
    macro_f1(&preds, labels)
}

/// Checkpoints embed the normalization stats they were trained with; any
/// mismatch with the dataset is a hard error.
pub(crate) fn check_norm_stats(
    ds: &crate::data::Dataset,
    extra: &serde_json::Value,
    what: &str,
) -> Result<()> {
    let stats = ds.stats()?;
    let want = serde_json::to_value(stats).expect("stats serialize");
    match extra.get("norm_stats") {
        Some(got) if *got == want => Ok(()),
        Some(_) => Err(Error::usage(format!(
            "{what} checkpoint was trained with different normalization stats"
        ))),
        None => Err(Error::usage(format!(
            "{what} checkpoint carries no normalization stats"
        ))),
    }
}

/// The estimator checkpoint embeds its schedule; a checkpoint is invalid
/// with a foreign schedule, so the schedule is always rebuilt from here.
pub(crate) fn schedule_from_extra(extra: &serde_json::Value) -> Result<crate::diffusion::NoiseSchedule> {
    let sched = extra
        .get("schedule")
        .ok_or_else(|| Error::usage("estimator checkpoint carries no schedule"))?;
    let t = sched
        .get("timesteps")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| Error::usage("schedule.timesteps missing"))? as usize;
    let beta_start = sched
        .get("beta_start")
        .and_then(|v| v.as_f64())
        .ok_or_else(|| Error::usage("schedule.beta_start missing"))?;
    let beta_end = sched
        .get("beta_end")
        .and_then(|v| v.as_f64())
        .ok_or_else(|| Error::usage("schedule.beta_end missing"))?;
    linear_schedule(t, beta_start, beta_end)
}
