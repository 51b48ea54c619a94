//! Experiment configuration: one JSON document with sections for data,
//! classifier, diffusion, attacks, purifiers, eval, seeds, and paths. Every
//! field has a default, unknown keys are rejected, and a stable hash of the
//! resolved form is embedded in every output so results can be traced back
//! to the exact configuration that produced them.
//!
//! The `seeds` section is authoritative: stage seeds are derived from the
//! master seed at resolution time and overwrite whatever the stage
//! subsections carry.

use crate::attacks::{AttackConfig, AttackKind};
use crate::classifier::ClassifierConfig;
use crate::data::GenConfig;
use crate::diffusion::EstimatorConfig;
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    pub generator: GenConfig,
    pub fractions: (f64, f64, f64),
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            generator: GenConfig::default(),
            fractions: (0.6, 0.2, 0.2),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiffusionSection {
    pub timesteps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub truncation_step: usize,
    pub backward_steps: usize,
    pub estimator: EstimatorConfig,
}

impl Default for DiffusionSection {
    fn default() -> Self {
        DiffusionSection {
            timesteps: 20,
            beta_start: 1e-4,
            beta_end: 0.02,
            truncation_step: 4, // 0.2 T
            backward_steps: 3,
            estimator: EstimatorConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AttacksSection {
    pub list: Vec<String>,
    pub config: AttackConfig,
}

impl Default for AttacksSection {
    fn default() -> Self {
        AttacksSection {
            list: AttackKind::ALL.iter().map(|k| k.name().to_string()).collect(),
            config: AttackConfig {
                // The trade-off constant is not pinned by the published
                // hyperparameters; this value makes the L2 attack the
                // strongest of the five, matching its reported role.
                cw_c: 100.0,
                ..AttackConfig::default()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PurifiersSection {
    pub list: Vec<String>,
    pub squeeze_bits: u32,
    pub squeeze_window: usize,
    pub lowpass_order: usize,
    pub lowpass_fc_hz: f64,
    pub svd_rank: usize,
}

impl Default for PurifiersSection {
    fn default() -> Self {
        PurifiersSection {
            list: [
                "none",
                "feature_squeezing",
                "lowpass",
                "svd",
                "event_decomposition",
                "diffusion",
            ]
            .iter()
            .map(|s| s.to_string())
            .collect(),
            squeeze_bits: 8,
            squeeze_window: 3,
            lowpass_order: 10,
            lowpass_fc_hz: 10.0,
            svd_rank: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub pmu_counts: Vec<usize>,
    pub latency_reps: usize,
    pub latency_warmup: usize,
    pub latency_window_len: usize,
    /// Attack traced by the `l2-trace` stage when none is named.
    pub l2_attack: String,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            pmu_counts: vec![8, 16, 32, 64],
            latency_reps: 30,
            latency_warmup: 10,
            latency_window_len: 60,
            l2_attack: "fgsm".to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SeedsSection {
    pub master: u64,
}

impl Default for SeedsSection {
    fn default() -> Self {
        SeedsSection { master: 7 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsSection {
    pub dataset: String,
    pub classifier: String,
    pub diffusion: String,
    pub attacks: String,
    pub purified: String,
    pub eval: String,
}

impl Default for PathsSection {
    fn default() -> Self {
        PathsSection {
            dataset: "dataset".to_string(),
            classifier: "classifier".to_string(),
            diffusion: "diffusion".to_string(),
            attacks: "attacks".to_string(),
            purified: "purified".to_string(),
            eval: "eval".to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub data: DataSection,
    pub classifier: ClassifierConfig,
    pub diffusion: DiffusionSection,
    pub attacks: AttacksSection,
    pub purifiers: PurifiersSection,
    pub eval: EvalSection,
    pub seeds: SeedsSection,
    pub paths: PathsSection,
}

/// Stage tags for deriving per-stage seeds from the master seed.
const SEED_DATA: u64 = 101;
const SEED_SPLIT: u64 = 102;
const SEED_CLASSIFIER: u64 = 103;
const SEED_DIFFUSION: u64 = 104;
const SEED_ATTACK: u64 = 105;
const SEED_PURIFY: u64 = 106;

impl RunConfig {
    /// The desk-scale default: every field as written in `Default`.
    pub fn desk() -> Self {
        Self::default()
    }

    /// Micro preset for the self-contained `verify` run: small enough to
    /// train everything from scratch in well under five minutes.
    pub fn micro() -> Self {
        let mut cfg = Self::default();
        cfg.data.generator.window_len = 24;
        cfg.data.generator.num_pmus = 3;
        cfg.data.generator.samples_per_class = 30;
        cfg.classifier.conv_channels = vec![8, 12];
        cfg.classifier.epochs = 12;
        cfg.diffusion.estimator.hidden_channels = 16;
        cfg.diffusion.estimator.epochs = 8;
        cfg.attacks.config.iters = 20;
        cfg.eval.pmu_counts = vec![2, 4];
        cfg.eval.latency_reps = 30;
        cfg.eval.latency_window_len = 24;
        cfg
    }

    /// Full-scale data shape (12 s at 30 Hz, 41 PMUs) for benchmarks.
    pub fn full_scale() -> Self {
        let mut cfg = Self::default();
        cfg.data.generator = GenConfig::full_scale();
        cfg.eval.pmu_counts = vec![40, 80, 120, 160];
        cfg.eval.latency_window_len = 360;
        cfg
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text)
            .map_err(|e| Error::config(format!("config parse: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.is_file() {
            return Err(Error::MissingArtifact(path.to_path_buf()));
        }
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.data.generator.validate()?;
        self.attacks.config.validate()?;
        if self.diffusion.timesteps < 2 {
            return Err(Error::config("diffusion.timesteps must be >= 2"));
        }
        if self.diffusion.truncation_step == 0
            || self.diffusion.truncation_step > self.diffusion.timesteps
        {
            return Err(Error::config(format!(
                "truncation step {} outside 1..={}",
                self.diffusion.truncation_step, self.diffusion.timesteps
            )));
        }
        if self.diffusion.backward_steps == 0
            || self.diffusion.backward_steps > self.diffusion.truncation_step
        {
            return Err(Error::config(format!(
                "backward steps {} outside 1..={}",
                self.diffusion.backward_steps, self.diffusion.truncation_step
            )));
        }
        for name in &self.attacks.list {
            AttackKind::from_name(name)?;
        }
        for name in &self.purifiers.list {
            if !KNOWN_PURIFIERS.contains(&name.as_str()) {
                return Err(Error::config(format!("unknown purifier {name:?}")));
            }
        }
        if !self.attacks.list.contains(&self.eval.l2_attack) {
            return Err(Error::config(format!(
                "eval.l2_attack {:?} is not in attacks.list",
                self.eval.l2_attack
            )));
        }
        if self.eval.latency_reps < 30 {
            return Err(Error::config("eval.latency_reps must be >= 30"));
        }
        if self.eval.pmu_counts.is_empty() {
            return Err(Error::config("eval.pmu_counts must not be empty"));
        }
        Ok(())
    }

    /// Copy with every stage seed rewritten from the master seed. All
    /// pipeline stages run on the resolved form; the config hash is taken
    /// over it too.
    pub fn resolved(&self) -> Self {
        let mut cfg = self.clone();
        let m = cfg.seeds.master;
        cfg.data.generator.seed = splitmix(m, SEED_DATA);
        cfg.classifier.seed = splitmix(m, SEED_CLASSIFIER);
        cfg.diffusion.estimator.seed = splitmix(m, SEED_DIFFUSION);
        cfg.attacks.config.seed = splitmix(m, SEED_ATTACK);
        cfg
    }

    pub fn split_seed(&self) -> u64 {
        splitmix(self.seeds.master, SEED_SPLIT)
    }

    pub fn purify_seed(&self) -> u64 {
        splitmix(self.seeds.master, SEED_PURIFY)
    }

    pub fn attack_kinds(&self) -> Vec<AttackKind> {
        self.attacks
            .list
            .iter()
            .map(|n| AttackKind::from_name(n).expect("validated"))
            .collect()
    }

    /// FNV-1a over the canonical JSON of the resolved config.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(&self.resolved()).expect("config serializes");
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in json.as_bytes() {
            h ^= *b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        format!("{h:016x}")
    }
}

pub const KNOWN_PURIFIERS: [&str; 6] = [
    "none",
    "feature_squeezing",
    "lowpass",
    "svd",
    "event_decomposition",
    "diffusion",
];

fn splitmix(master: u64, tag: u64) -> u64 {
    let mut z = master ^ tag.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
