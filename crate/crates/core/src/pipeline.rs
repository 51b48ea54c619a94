//! File-based pipeline stages.
//!
//! Every stage reads its inputs from the output directory and writes its
//! artifacts back there, so partial reruns are cheap and a full rerun from
//! the emitted summary reproduces the deterministic CSVs byte-identically.
//! Stage boundaries always pass through files: downstream stages see exactly
//! the 32-bit payloads a fresh process would load.

use crate::attacks::{attack_dataset, AttackKind, AttackRow};
use crate::classifier::{train_classifier, write_history_csv};
use crate::config::RunConfig;
use crate::data::{
    compute_stats, generate_dataset, load_dataset, normalize, save_dataset, split, Dataset,
    PmuWindow, SplitKind,
};
use crate::diffusion::{linear_schedule, train_noise_estimator, PurifyConfig};
use crate::error::{Error, Result};
use crate::eval::{
    build_purifiers, emit_report, load_or_new, run_f1_grid, run_l2_trace, run_latency_bench,
    training_ranges, ExperimentPlan, Purifier,
};
use crate::nn::{load_network, save_network};
use serde_json::json;
use std::path::{Path, PathBuf};
use std::sync::Arc;

pub fn dataset_dir(cfg: &RunConfig, out: &Path) -> PathBuf {
    out.join(&cfg.paths.dataset)
}

pub fn classifier_dir(cfg: &RunConfig, out: &Path) -> PathBuf {
    out.join(&cfg.paths.classifier)
}

pub fn diffusion_dir(cfg: &RunConfig, out: &Path) -> PathBuf {
    out.join(&cfg.paths.diffusion)
}

pub fn attack_dir(cfg: &RunConfig, out: &Path, kind: AttackKind) -> PathBuf {
    out.join(&cfg.paths.attacks).join(kind.name())
}

pub fn eval_dir(cfg: &RunConfig, out: &Path) -> PathBuf {
    out.join(&cfg.paths.eval)
}

/// Generate, split, and annotate the dataset with training-split stats.
/// Stored raw (consumers z-score on load), deterministic given the seeds.
pub fn gen_data(cfg: &RunConfig, out: &Path) -> Result<PathBuf> {
    let cfg = cfg.resolved();
    let ds = generate_dataset(&cfg.data.generator)?;
    let mut ds = split(&ds, cfg.data.fractions, cfg.split_seed())?;
    ds.normalization = Some(compute_stats(&ds)?);
    let dir = dataset_dir(&cfg, out);
    save_dataset(&ds, &dir)?;
    Ok(dir)
}

fn load_normalized(cfg: &RunConfig, out: &Path) -> Result<Dataset> {
    normalize(&load_dataset(&dataset_dir(cfg, out))?)
}

/// Train the event classifier; write its checkpoint and `history.csv`.
pub fn train_classifier_stage(cfg: &RunConfig, out: &Path) -> Result<PathBuf> {
    let cfg = cfg.resolved();
    let ds = load_normalized(&cfg, out)?;
    let (net, history) = train_classifier(&ds, &cfg.classifier)?;
    let dir = classifier_dir(&cfg, out);
    let extra = json!({
        "role": "classifier",
        "norm_stats": ds.stats()?,
    });
    save_network(&net, &dir, extra)?;
    write_history_csv(&history, &dir.join("history.csv"))?;
    Ok(dir)
}

/// Train the noise estimator on the clean training split; the checkpoint
/// embeds the schedule it was trained against.
pub fn train_diffusion_stage(cfg: &RunConfig, out: &Path) -> Result<PathBuf> {
    let cfg = cfg.resolved();
    let ds = load_normalized(&cfg, out)?;
    let schedule = linear_schedule(
        cfg.diffusion.timesteps,
        cfg.diffusion.beta_start,
        cfg.diffusion.beta_end,
    )?;
    let (net, history) = train_noise_estimator(&ds, &schedule, &cfg.diffusion.estimator)?;
    let dir = diffusion_dir(&cfg, out);
    let extra = json!({
        "role": "noise-estimator",
        "schedule": {
            "timesteps": cfg.diffusion.timesteps,
            "beta_start": cfg.diffusion.beta_start,
            "beta_end": cfg.diffusion.beta_end,
        },
        "norm_stats": ds.stats()?,
    });
    save_network(&net, &dir, extra)?;
    let mut csv = String::from("epoch,train_loss,val_loss\n");
    for h in &history {
        csv.push_str(&format!("{},{},{}\n", h.epoch, h.train_loss, h.val_loss));
    }
    let hist_path = dir.join("history.csv");
    std::fs::write(&hist_path, csv).map_err(|e| Error::io(&hist_path, e))?;
    Ok(dir)
}

/// Attack the test split with each named attack, writing one attacked
/// dataset per attack plus `attack_meta.json` with per-sample outcomes.
pub fn attack_stage(cfg: &RunConfig, out: &Path, kinds: &[AttackKind]) -> Result<Vec<PathBuf>> {
    let cfg = cfg.resolved();
    let ds = load_normalized(&cfg, out)?;
    let (net, _) = load_network(&classifier_dir(&cfg, out))?;
    let test = ds.split_samples(SplitKind::Test)?;
    let samples: Vec<(&PmuWindow, crate::data::EventClass)> =
        test.iter().map(|(w, l)| (w, *l)).collect();

    let mut dirs = Vec::new();
    for &kind in kinds {
        let (rows, summary) = attack_dataset(&net, &samples, kind, &cfg.attacks.config)?;
        // Flagged rows fall back to the clean window so downstream shapes
        // stay aligned; the meta file records what happened.
        let adv_samples: Vec<(PmuWindow, crate::data::EventClass)> = rows
            .iter()
            .zip(&samples)
            .map(|(row, (clean, label))| {
                let mut window = match &row.outcome {
                    Ok(r) => r.adversarial.clone(),
                    Err(_) => (*clean).clone(),
                };
                window.values_mut().quantize_f32();
                (window, *label)
            })
            .collect();
        let adv_ds = Dataset {
            samples: adv_samples,
            normalization: ds.normalization.clone(),
            splits: None,
            generator_seed: ds.generator_seed,
            normalized: true,
            gen_config: ds.gen_config.clone(),
        };
        let dir = attack_dir(&cfg, out, kind);
        save_dataset(&adv_ds, &dir)?;
        let meta = json!({
            "attack": kind.name(),
            "config": cfg.attacks.config,
            "summary": summary,
            "per_sample": rows.iter().map(row_meta).collect::<Vec<_>>(),
        });
        let meta_path = dir.join("attack_meta.json");
        std::fs::write(
            &meta_path,
            serde_json::to_string_pretty(&meta).expect("meta serializes"),
        )
        .map_err(|e| Error::io(&meta_path, e))?;
        dirs.push(dir);
    }
    Ok(dirs)
}

fn row_meta(row: &AttackRow) -> serde_json::Value {
    match &row.outcome {
        Ok(r) => json!({
            "index": row.sample_index,
            "success": r.success,
            "l2_norm": r.l2_norm,
            "max_abs": r.max_abs,
        }),
        Err(e) => json!({
            "index": row.sample_index,
            "flagged": e,
        }),
    }
}

/// Purify one source ("original" or an attack name) with one purifier and
/// write the purified dataset.
pub fn purify_stage(
    cfg: &RunConfig,
    out: &Path,
    purifier_name: &str,
    source: &str,
) -> Result<PathBuf> {
    let cfg = cfg.resolved();
    let ds = load_normalized(&cfg, out)?;
    let (windows, labels): (Vec<PmuWindow>, Vec<crate::data::EventClass>) = if source == "original"
    {
        let test = ds.split_samples(SplitKind::Test)?;
        (
            test.iter().map(|(w, _)| (*w).clone()).collect(),
            test.iter().map(|(_, l)| *l).collect(),
        )
    } else {
        let kind = AttackKind::from_name(source)?;
        let adv = load_dataset(&attack_dir(&cfg, out, kind))?;
        let labels = adv.samples.iter().map(|(_, l)| *l).collect();
        (adv.samples.into_iter().map(|(w, _)| w).collect(), labels)
    };

    let purifier = single_purifier(&cfg, out, purifier_name, &ds)?;
    let refs: Vec<&PmuWindow> = windows.iter().collect();
    let purified = purifier.apply_batch(&refs)?;
    let samples: Vec<(PmuWindow, crate::data::EventClass)> = purified
        .into_iter()
        .zip(labels)
        .map(|(mut w, l)| {
            w.values_mut().quantize_f32();
            (w, l)
        })
        .collect();
    let out_ds = Dataset {
        samples,
        normalization: ds.normalization.clone(),
        splits: None,
        generator_seed: ds.generator_seed,
        normalized: true,
        gen_config: ds.gen_config.clone(),
    };
    let dir = out
        .join(&cfg.paths.purified)
        .join(purifier_name)
        .join(source);
    save_dataset(&out_ds, &dir)?;
    Ok(dir)
}

fn single_purifier(
    cfg: &RunConfig,
    out: &Path,
    name: &str,
    ds: &Dataset,
) -> Result<Purifier> {
    let diffusion = if name == "diffusion" {
        let (estimator, extra) = load_network(&diffusion_dir(cfg, out))?;
        let schedule = crate::eval::schedule_from_checkpoint_extra(&extra)?;
        let pcfg = PurifyConfig {
            t_star: cfg.diffusion.truncation_step,
            requested_s: cfg.diffusion.backward_steps,
            tau: crate::diffusion::make_tau_grid(
                cfg.diffusion.truncation_step,
                cfg.diffusion.backward_steps,
            )?,
            seed: cfg.purify_seed(),
        };
        Some((Arc::new(estimator), schedule, pcfg))
    } else {
        None
    };
    let mut section = cfg.purifiers.clone();
    section.list = vec![name.to_string()];
    let purifiers = build_purifiers(
        &section,
        &training_ranges(ds)?,
        ds.samples[0].0.sample_rate_hz(),
        diffusion,
    )?;
    Ok(purifiers.into_iter().next().expect("one purifier"))
}

/// The experiment plan the eval stages run against.
pub fn plan_for(cfg: &RunConfig, out: &Path) -> ExperimentPlan {
    ExperimentPlan {
        dataset_dir: dataset_dir(cfg, out),
        classifier_dir: classifier_dir(cfg, out),
        estimator_dir: diffusion_dir(cfg, out),
        attacked_dirs: cfg
            .attack_kinds()
            .into_iter()
            .map(|k| (k, attack_dir(cfg, out, k)))
            .collect(),
        purifiers: cfg.purifiers.clone(),
        purify_seed: cfg.purify_seed(),
        truncation_step: cfg.diffusion.truncation_step,
        backward_steps: cfg.diffusion.backward_steps,
    }
}

/// Run the purifier x attack grid and fold it into the eval summary.
pub fn eval_grid_stage(cfg: &RunConfig, out: &Path) -> Result<crate::eval::EvalReport> {
    let cfg = cfg.resolved();
    let plan = plan_for(&cfg, out);
    let cells = run_f1_grid(&plan)?;
    let dir = eval_dir(&cfg, out);
    let mut report = load_or_new(&dir, &cfg);
    report.f1_grid = Some(cells);
    emit_report(&report, &dir)?;
    Ok(report)
}

/// Trace the L2 distance for one attack and fold it into the eval summary.
pub fn l2_trace_stage(
    cfg: &RunConfig,
    out: &Path,
    attack: Option<AttackKind>,
) -> Result<crate::eval::EvalReport> {
    let cfg = cfg.resolved();
    let plan = plan_for(&cfg, out);
    let kind = match attack {
        Some(k) => k,
        None => AttackKind::from_name(&cfg.eval.l2_attack)?,
    };
    let trace = run_l2_trace(&plan, kind)?;
    let dir = eval_dir(&cfg, out);
    let mut report = load_or_new(&dir, &cfg);
    report.l2_trace = Some(trace);
    emit_report(&report, &dir)?;
    Ok(report)
}

/// Latency benchmark across PMU counts, folded into the eval summary.
pub fn bench_stage(cfg: &RunConfig, out: &Path) -> Result<crate::eval::EvalReport> {
    let cfg = cfg.resolved();
    let table = run_latency_bench(
        &cfg.purifiers,
        &cfg.diffusion,
        &cfg.eval.pmu_counts,
        cfg.eval.latency_window_len,
        cfg.eval.latency_reps,
        cfg.eval.latency_warmup,
    )?;
    let dir = eval_dir(&cfg, out);
    let mut report = load_or_new(&dir, &cfg);
    report.latency = Some(table);
    emit_report(&report, &dir)?;
    Ok(report)
}

/// The whole deterministic chain: gen, train both models, attack, grid,
/// trace. (The latency bench is wall-clock and runs separately.)
pub fn run_full_pipeline(cfg: &RunConfig, out: &Path) -> Result<crate::eval::EvalReport> {
    gen_data(cfg, out)?;
    train_classifier_stage(cfg, out)?;
    train_diffusion_stage(cfg, out)?;
    attack_stage(cfg, out, &cfg.attack_kinds())?;
    eval_grid_stage(cfg, out)?;
    l2_trace_stage(cfg, out, None)
}
