//! Synthetic PMU event windows: generation, splitting, normalization, and
//! dataset persistence.
//!
//! A window is a `[W x K x 4]` tensor of K PMUs over W time steps with the
//! fixed channel order (P, Q, |V|, F). Four event classes are generated from
//! parametric templates: Normal (flat per-PMU baselines plus noise), Voltage
//! (step sag/swell in |V| with exponential recovery and a coupled Q
//! response), Frequency (ramp-then-recover deviation in F with a coupled P
//! response), and Oscillation (a sustained sinusoid on P and Q). Events get a
//! random onset and per-PMU participation weights in [0, 1] so they propagate
//! with varying strength across the fleet.
//!
//! Generation is deterministic given the seed and embarrassingly parallel:
//! every sample draws from its own RNG stream derived from (seed, sample
//! index), so serial and parallel generation agree bit-for-bit. Generated
//! values are rounded through f32 at creation so the on-disk 32-bit payload
//! round-trips exactly.

mod generate;
mod io;

pub use generate::{dominant_frequency_hz, generate_dataset};
pub use io::{load_dataset, save_dataset};

use crate::error::{Error, Result};
use crate::rng::{self, Stream};
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};

pub const NUM_CHANNELS: usize = 4;
pub const NUM_CLASSES: usize = 4;

/// Channel indices within a window's innermost axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Channel {
    ActivePower = 0,
    ReactivePower = 1,
    VoltageMagnitude = 2,
    Frequency = 3,
}

/// One event window: `values` has shape `[W, K, 4]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PmuWindow {
    values: Tensor,
    sample_rate_hz: f64,
}

impl PmuWindow {
    pub fn new(values: Tensor, sample_rate_hz: f64) -> Result<Self> {
        let shape = values.shape();
        if shape.len() != 3 || shape[2] != NUM_CHANNELS {
            return Err(Error::config(format!(
                "window must be [W, K, {NUM_CHANNELS}], got {shape:?}"
            )));
        }
        if shape[0] < 8 {
            return Err(Error::config(format!("window length {} < 8", shape[0])));
        }
        if shape[1] < 1 {
            return Err(Error::config("window needs at least one PMU"));
        }
        if !(sample_rate_hz > 0.0) {
            return Err(Error::config("sample rate must be positive"));
        }
        Ok(Self {
            values,
            sample_rate_hz,
        })
    }

    pub fn values(&self) -> &Tensor {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut Tensor {
        &mut self.values
    }

    pub fn into_values(self) -> Tensor {
        self.values
    }

    /// (W, K) dimensions.
    pub fn dims(&self) -> (usize, usize) {
        (self.values.shape()[0], self.values.shape()[1])
    }

    pub fn sample_rate_hz(&self) -> f64 {
        self.sample_rate_hz
    }

    /// Replace the value tensor, keeping the sample rate. Shape must match.
    pub fn with_values(&self, values: Tensor) -> Result<Self> {
        if values.shape() != self.values.shape() {
            return Err(Error::config(format!(
                "replacement shape {:?} != window shape {:?}",
                values.shape(),
                self.values.shape()
            )));
        }
        Ok(Self {
            values,
            sample_rate_hz: self.sample_rate_hz,
        })
    }
}

/// The four event classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EventClass {
    Normal = 0,
    Voltage = 1,
    Frequency = 2,
    Oscillation = 3,
}

impl EventClass {
    pub const ALL: [EventClass; NUM_CLASSES] = [
        EventClass::Normal,
        EventClass::Voltage,
        EventClass::Frequency,
        EventClass::Oscillation,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Result<Self> {
        Self::ALL
            .get(i)
            .copied()
            .ok_or_else(|| Error::config(format!("class index {i} out of range")))
    }

    pub fn one_hot(self) -> [f64; NUM_CLASSES] {
        let mut v = [0.0; NUM_CLASSES];
        v[self.index()] = 1.0;
        v
    }

    pub fn name(self) -> &'static str {
        match self {
            EventClass::Normal => "normal",
            EventClass::Voltage => "voltage",
            EventClass::Frequency => "frequency",
            EventClass::Oscillation => "oscillation",
        }
    }
}

pub type EventLabel = EventClass;

/// Per-channel z-score statistics, computed on the training split only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: [f64; NUM_CHANNELS],
    pub std: [f64; NUM_CHANNELS],
}

/// Train/val/test index lists; disjoint and exhaustive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Splits {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Generator configuration. Amplitudes are in raw channel units (P in
/// per-unit-ish power, |V| in per-unit, F in Hz); `noise_std` scales a fixed
/// per-channel noise floor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenConfig {
    pub window_len: usize,
    pub num_pmus: usize,
    pub samples_per_class: usize,
    pub sample_rate_hz: f64,
    pub noise_std: f64,
    pub voltage_amp: (f64, f64),
    pub freq_amp: (f64, f64),
    pub osc_amp: (f64, f64),
    pub osc_freq_hz: (f64, f64),
    pub seed: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            window_len: 60,
            num_pmus: 8,
            samples_per_class: 200,
            sample_rate_hz: 30.0,
            noise_std: 1.0,
            voltage_amp: (0.024, 0.036),
            freq_amp: (0.010, 0.015),
            osc_amp: (0.10, 0.15),
            osc_freq_hz: (1.0, 2.0),
            seed: 7,
        }
    }
}

impl GenConfig {
    /// Mirrors the full-scale data shape (12 s at 30 Hz, 41 PMUs) for
    /// benchmarks; desk experiments use the default.
    pub fn full_scale() -> Self {
        GenConfig {
            window_len: 360,
            num_pmus: 41,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.samples_per_class == 0 {
            return Err(Error::config("samples_per_class must be >= 1"));
        }
        if self.window_len < 8 {
            return Err(Error::config("window_len must be >= 8"));
        }
        if self.num_pmus == 0 {
            return Err(Error::config("num_pmus must be >= 1"));
        }
        if !(self.sample_rate_hz > 0.0) {
            return Err(Error::config("sample_rate_hz must be positive"));
        }
        if self.noise_std < 0.0 {
            return Err(Error::config("noise_std must be >= 0"));
        }
        for (name, r) in [
            ("voltage_amp", self.voltage_amp),
            ("freq_amp", self.freq_amp),
            ("osc_amp", self.osc_amp),
            ("osc_freq_hz", self.osc_freq_hz),
        ] {
            if !(r.0 <= r.1) || r.0 < 0.0 {
                return Err(Error::config(format!("empty or negative range {name}: {r:?}")));
            }
        }
        Ok(())
    }
}

/// A labeled dataset plus optional normalization stats and split indices.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub samples: Vec<(PmuWindow, EventLabel)>,
    pub normalization: Option<NormStats>,
    pub splits: Option<Splits>,
    pub generator_seed: u64,
    /// True once window values are z-scored.
    pub normalized: bool,
    pub gen_config: GenConfig,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn splits(&self) -> Result<&Splits> {
        self.splits
            .as_ref()
            .ok_or_else(|| Error::usage("dataset has no splits yet"))
    }

    pub fn stats(&self) -> Result<&NormStats> {
        self.normalization
            .as_ref()
            .ok_or_else(|| Error::usage("dataset has no normalization stats yet"))
    }

    fn indices_of(&self, which: SplitKind) -> Result<&[usize]> {
        let s = self.splits()?;
        Ok(match which {
            SplitKind::Train => &s.train,
            SplitKind::Val => &s.val,
            SplitKind::Test => &s.test,
        })
    }

    /// Samples of one split, in index order.
    pub fn split_samples(&self, which: SplitKind) -> Result<Vec<&(PmuWindow, EventLabel)>> {
        Ok(self
            .indices_of(which)?
            .iter()
            .map(|&i| &self.samples[i])
            .collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitKind {
    Train,
    Val,
    Test,
}

/// Stratified split into train/val/test. Fractions must sum to 1 and no
/// split may round down to empty. Deterministic given the seed.
pub fn split(ds: &Dataset, fractions: (f64, f64, f64), seed: u64) -> Result<Dataset> {
    let (ftr, fva, fte) = fractions;
    if (ftr + fva + fte - 1.0).abs() > 1e-9 {
        return Err(Error::config(format!(
            "split fractions must sum to 1, got {fractions:?}"
        )));
    }
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); NUM_CLASSES];
    for (i, (_, label)) in ds.samples.iter().enumerate() {
        by_class[label.index()].push(i);
    }
    let mut train = Vec::new();
    let mut val = Vec::new();
    let mut test = Vec::new();
    for (class_idx, members) in by_class.iter().enumerate() {
        if members.is_empty() {
            continue;
        }
        let n = members.len();
        let n_train = (ftr * n as f64).round() as usize;
        let n_val = (fva * n as f64).round() as usize;
        let n_train = n_train.min(n);
        let n_val = n_val.min(n - n_train);
        let n_test = n - n_train - n_val;
        if n_train == 0 || n_val == 0 || n_test == 0 {
            return Err(Error::config(format!(
                "split {fractions:?} leaves an empty split for class {class_idx} ({n} samples: {n_train}/{n_val}/{n_test})"
            )));
        }
        let mut rng = rng::rng_for(seed, Stream::Split, class_idx as u64);
        let order = rng::shuffled_indices(n, &mut rng);
        for (pos, &ord) in order.iter().enumerate() {
            let sample_idx = members[ord];
            if pos < n_train {
                train.push(sample_idx);
            } else if pos < n_train + n_val {
                val.push(sample_idx);
            } else {
                test.push(sample_idx);
            }
        }
    }
    train.sort_unstable();
    val.sort_unstable();
    test.sort_unstable();
    let mut out = ds.clone();
    out.splits = Some(Splits { train, val, test });
    Ok(out)
}

/// Z-score all windows using per-channel statistics from the training split.
/// Rejects zero-variance channels.
pub fn normalize(ds: &Dataset) -> Result<Dataset> {
    if ds.normalized {
        return Err(Error::usage("dataset is already normalized"));
    }
    let stats = match &ds.normalization {
        Some(s) => s.clone(),
        None => compute_stats(ds)?,
    };
    let mut out = ds.clone();
    for (window, _) in &mut out.samples {
        for (i, v) in window.values.data_mut().iter_mut().enumerate() {
            let c = i % NUM_CHANNELS;
            *v = (*v - stats.mean[c]) / stats.std[c];
        }
    }
    out.normalization = Some(stats);
    out.normalized = true;
    Ok(out)
}

/// Per-channel mean/std over the training split. Fails on zero variance.
pub fn compute_stats(ds: &Dataset) -> Result<NormStats> {
    let train = ds.indices_of(SplitKind::Train)?;
    if train.is_empty() {
        return Err(Error::usage("empty training split"));
    }
    let mut sum = [0.0f64; NUM_CHANNELS];
    let mut sum_sq = [0.0f64; NUM_CHANNELS];
    let mut count = [0usize; NUM_CHANNELS];
    for &i in train {
        let values = ds.samples[i].0.values();
        for (j, &v) in values.data().iter().enumerate() {
            let c = j % NUM_CHANNELS;
            sum[c] += v;
            sum_sq[c] += v * v;
            count[c] += 1;
        }
    }
    let mut mean = [0.0; NUM_CHANNELS];
    let mut std = [0.0; NUM_CHANNELS];
    for c in 0..NUM_CHANNELS {
        mean[c] = sum[c] / count[c] as f64;
        let var = (sum_sq[c] / count[c] as f64 - mean[c] * mean[c]).max(0.0);
        if var <= 0.0 {
            return Err(Error::config(format!(
                "channel {c} has zero variance on the training split"
            )));
        }
        std[c] = var.sqrt();
    }
    Ok(NormStats { mean, std })
}

/// Invert the z-score of one window.
pub fn denormalize(window: &PmuWindow, stats: &NormStats) -> PmuWindow {
    let mut out = window.clone();
    for (i, v) in out.values.data_mut().iter_mut().enumerate() {
        let c = i % NUM_CHANNELS;
        *v = *v * stats.std[c] + stats.mean[c];
    }
    out
}

/// Per-channel min/max over a set of windows (used by feature squeezing).
pub fn per_channel_min_max(windows: &[&PmuWindow]) -> [(f64, f64); NUM_CHANNELS] {
    let mut mm = [(f64::INFINITY, f64::NEG_INFINITY); NUM_CHANNELS];
    for w in windows {
        for (i, &v) in w.values().data().iter().enumerate() {
            let c = i % NUM_CHANNELS;
            mm[c].0 = mm[c].0.min(v);
            mm[c].1 = mm[c].1.max(v);
        }
    }
    mm
}

#[cfg(test)]
mod tests;
