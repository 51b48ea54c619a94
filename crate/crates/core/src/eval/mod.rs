//! Evaluation harness: the purifier x attack F1 grid, the L2-distance trace
//! of the purification trajectory, and the streaming latency benchmark.
//!
//! The harness is the only component that owns threads: purifiers, attacks,
//! and predictions are pure per-sample operations it fans out over a worker
//! pool, with per-sample seeds so results are identical however the work is
//! scheduled. The "none" purifier runs through the same code path as every
//! real purifier.

mod f1_grid;
mod l2_trace;
mod latency;
mod report;

pub use f1_grid::{run_f1_grid, F1Cell};
pub(crate) use f1_grid::schedule_from_extra as schedule_from_checkpoint_extra;
pub use l2_trace::{idempotence_gap, run_l2_trace, L2Trace, L2TraceStep};
pub use latency::{run_latency_bench, witness_window, LatencyRow, LatencyTable};
pub use report::{emit_report, load_or_new, parse_summary, EvalReport, HostMeta};

use crate::baselines::{
    self, butter_design, event_participation_purify, feature_squeeze, lowpass_filter, svd_purify,
    ChannelRanges, SosFilter,
};
use crate::config::PurifiersSection;
use crate::data::{PmuWindow, SplitKind};
use crate::diffusion::{purify_values, NoiseSchedule, PurifyConfig};
use crate::error::{Error, Result};
use crate::nn::Network;
use crate::rng::{self, Stream};
use crate::tensor::Tensor;
use rayon::prelude::*;
use std::path::PathBuf;
use std::sync::Arc;

/// A realized purifier holding whatever artifacts it needs. Application is
/// pure per window; the diffusion variant derives its forward-noise seed
/// from (purify seed, sample index).
#[derive(Clone)]
pub enum Purifier {
    None,
    FeatureSqueeze {
        bits: u32,
        window: usize,
        ranges: ChannelRanges,
    },
    LowPass {
        filter: SosFilter,
    },
    Svd {
        rank: usize,
    },
    EventDecomposition,
    Diffusion {
        estimator: Arc<Network>,
        schedule: NoiseSchedule,
        pcfg: PurifyConfig,
    },
}

impl Purifier {
    pub fn name(&self) -> &'static str {
        match self {
            Purifier::None => "none",
            Purifier::FeatureSqueeze { .. } => "feature_squeezing",
            Purifier::LowPass { .. } => "lowpass",
            Purifier::Svd { .. } => "svd",
            Purifier::EventDecomposition => "event_decomposition",
            Purifier::Diffusion { .. } => "diffusion",
        }
    }

    pub fn apply(&self, window: &PmuWindow, sample_index: u64) -> Result<PmuWindow> {
        match self {
            Purifier::None => Ok(window.clone()),
            Purifier::FeatureSqueeze {
                bits,
                window: smooth,
                ranges,
            } => feature_squeeze(window, *bits, *smooth, ranges),
            Purifier::LowPass { filter } => Ok(lowpass_filter(window, filter)),
            Purifier::Svd { rank } => svd_purify(window, *rank),
            Purifier::EventDecomposition => event_participation_purify(window),
            Purifier::Diffusion {
                estimator,
                schedule,
                pcfg,
            } => {
                let seed = rng::derive_seed(pcfg.seed, Stream::PurifyNoise, sample_index);
                let values =
                    purify_values(window.values(), estimator.as_ref(), schedule, pcfg, seed)?;
                window.with_values(values)
            }
        }
    }

    /// Apply to a batch, order-stable under any scheduling.
    pub fn apply_batch(&self, windows: &[&PmuWindow]) -> Result<Vec<PmuWindow>> {
        windows
            .par_iter()
            .enumerate()
            .map(|(i, w)| self.apply(w, i as u64))
            .collect()
    }
}

/// Build the purifier list named by the config section.
pub fn build_purifiers(
    section: &PurifiersSection,
    ranges: &ChannelRanges,
    sample_rate_hz: f64,
    diffusion: Option<(Arc<Network>, NoiseSchedule, PurifyConfig)>,
) -> Result<Vec<Purifier>> {
    let mut out = Vec::with_capacity(section.list.len());
    for name in &section.list {
        out.push(match name.as_str() {
            "none" => Purifier::None,
            "feature_squeezing" => Purifier::FeatureSqueeze {
                bits: section.squeeze_bits,
                window: section.squeeze_window,
                ranges: *ranges,
            },
            "lowpass" => Purifier::LowPass {
                filter: butter_design(section.lowpass_order, section.lowpass_fc_hz, sample_rate_hz)?,
            },
            "svd" => Purifier::Svd {
                rank: section.svd_rank,
            },
            "event_decomposition" => Purifier::EventDecomposition,
            "diffusion" => {
                let (estimator, schedule, pcfg) = diffusion
                    .clone()
                    .ok_or_else(|| Error::usage("diffusion purifier requested without an estimator"))?;
                Purifier::Diffusion {
                    estimator,
                    schedule,
                    pcfg,
                }
            }
            other => return Err(Error::config(format!("unknown purifier {other:?}"))),
        });
    }
    Ok(out)
}

/// Everything the harness needs on disk, checked before any compute.
#[derive(Debug, Clone)]
pub struct ExperimentPlan {
    pub dataset_dir: PathBuf,
    pub classifier_dir: PathBuf,
    pub estimator_dir: PathBuf,
    /// Attacked test-split datasets, one per attack, aligned with the clean
    /// test split sample order.
    pub attacked_dirs: Vec<(crate::attacks::AttackKind, PathBuf)>,
    pub purifiers: PurifiersSection,
    pub purify_seed: u64,
    pub truncation_step: usize,
    pub backward_steps: usize,
}

impl ExperimentPlan {
    /// Every referenced artifact must exist; reported before any compute.
    pub fn validate(&self) -> Result<()> {
        for dir in [&self.dataset_dir, &self.classifier_dir, &self.estimator_dir] {
            let manifest = dir.join("manifest.json");
            if !manifest.is_file() {
                return Err(Error::MissingArtifact(manifest));
            }
        }
        for (_, dir) in &self.attacked_dirs {
            let manifest = dir.join("manifest.json");
            if !manifest.is_file() {
                return Err(Error::MissingArtifact(manifest));
            }
        }
        Ok(())
    }
}

/// Channel min/max over the training split of a normalized dataset.
pub fn training_ranges(ds: &crate::data::Dataset) -> Result<ChannelRanges> {
    let train = ds.split_samples(SplitKind::Train)?;
    let windows: Vec<&PmuWindow> = train.iter().map(|(w, _)| w).collect();
    Ok(crate::data::per_channel_min_max(&windows))
}

pub(crate) fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

pub(crate) fn l2_distance(a: &Tensor, b: &Tensor) -> f64 {
    a.sub(b).l2_norm()
}

pub(crate) use baselines::channel_matrix;
