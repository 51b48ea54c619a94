//! The parametric event-window generator.

use super::{Channel, Dataset, EventClass, GenConfig, PmuWindow, NUM_CHANNELS};
use crate::error::Result;
use crate::rng::{self, uniform_in, Stream};
use crate::tensor::Tensor;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use std::f64::consts::PI;

/// Per-channel white-noise floor in raw units, scaled by
/// `GenConfig::noise_std`. |V| and F come from precise phasor estimates; P
/// and Q carry most of the measurement churn.
const NOISE_SCALE: [f64; NUM_CHANNELS] = [0.02, 0.014, 0.002, 0.001];

/// Per-channel amplitude of the slow background wander (load drift,
/// regulation hunting), also scaled by `noise_std`. Much slower than any
/// event signature, so classes stay separable by shape, yet wide enough
/// that event evidence is thin relative to the channel spread.
const WANDER_SCALE: [f64; NUM_CHANNELS] = [0.02, 0.012, 0.002, 0.0008];
const WANDER_FREQ_HZ: (f64, f64) = (0.02, 0.15);
const WANDER_COMPONENTS: usize = 2;

/// Events echo into a sibling channel with the same temporal shape, so
/// sibling classes differ mainly in cross-channel ratio. Detection stays
/// easy while class boundaries sit close together.
const CROSS_COUPLING: f64 = 0.0;
/// Natural per-channel event scales (P, Q, |V|, F) for converting a primary
/// amplitude into its echo.
const EVENT_UNIT: [f64; NUM_CHANNELS] = [0.03, 0.02, 0.0035, 0.0015];

/// Baseline ranges per channel: P, Q in per-unit-ish power, |V| in pu,
/// F as deviation around 60 Hz.
const P_BASE: (f64, f64) = (0.8, 1.2);
const Q_BASE: (f64, f64) = (0.15, 0.45);
const V_BASE: (f64, f64) = (0.99, 1.01);
const F_NOMINAL: f64 = 60.0;
const F_JITTER: (f64, f64) = (-0.004, 0.004);

/// Generate a class-balanced dataset. Deterministic given `cfg.seed`; every
/// sample has its own derived RNG stream, so parallel generation matches
/// serial generation bit-for-bit.
pub fn generate_dataset(cfg: &GenConfig) -> Result<Dataset> {
    cfg.validate()?;
    let total = cfg.samples_per_class * EventClass::ALL.len();
    let samples: Vec<(PmuWindow, EventClass)> = (0..total)
        .into_par_iter()
        .map(|global_idx| {
            let class = EventClass::ALL[global_idx / cfg.samples_per_class];
            let window = generate_window(cfg, class, global_idx as u64);
            (window, class)
        })
        .collect();
    Ok(Dataset {
        samples,
        normalization: None,
        splits: None,
        generator_seed: cfg.seed,
        normalized: false,
        gen_config: cfg.clone(),
    })
}

fn generate_window(cfg: &GenConfig, class: EventClass, global_idx: u64) -> PmuWindow {
    let mut rng = rng::rng_for(cfg.seed, Stream::DataGen, global_idx);
    let (w, k) = (cfg.window_len, cfg.num_pmus);
    let fs = cfg.sample_rate_hz;

    // Per-PMU baselines, drawn in fixed channel order.
    let mut base = vec![[0.0f64; NUM_CHANNELS]; k];
    for b in base.iter_mut() {
        b[Channel::ActivePower as usize] = uniform_in(&mut rng, P_BASE);
        b[Channel::ReactivePower as usize] = uniform_in(&mut rng, Q_BASE);
        b[Channel::VoltageMagnitude as usize] = uniform_in(&mut rng, V_BASE);
        b[Channel::Frequency as usize] = F_NOMINAL + uniform_in(&mut rng, F_JITTER);
    }

    // Slow per-(PMU, channel) wander components, drawn in fixed order.
    let mut wander = vec![[[0.0f64; 3]; NUM_CHANNELS * WANDER_COMPONENTS]; k];
    for comps in wander.iter_mut() {
        for (ci, comp) in comps.iter_mut().enumerate() {
            let c = ci % NUM_CHANNELS;
            comp[0] = WANDER_SCALE[c] * cfg.noise_std * uniform_in(&mut rng, (0.5, 1.5));
            comp[1] = uniform_in(&mut rng, WANDER_FREQ_HZ);
            comp[2] = rng.random_range(0.0..(2.0 * PI));
        }
    }

    let mut values = Tensor::zeros(vec![w, k, NUM_CHANNELS]);
    for t in 0..w {
        for (pmu, b) in base.iter().enumerate() {
            for c in 0..NUM_CHANNELS {
                let mut v = b[c];
                for comp_idx in 0..WANDER_COMPONENTS {
                    let comp = &wander[pmu][comp_idx * NUM_CHANNELS + c];
                    v += comp[0] * (2.0 * PI * comp[1] * t as f64 / fs + comp[2]).sin();
                }
                let idx = values.idx3(t, pmu, c);
                values.data_mut()[idx] = v;
            }
        }
    }

    if class != EventClass::Normal {
        // Early onset so the event spans most of the window; per-PMU
        // participation in [0, 1] normalized so the strongest PMU carries
        // the full amplitude.
        let onset = rng.random_range((w as f64 * 0.1) as usize..=(w as f64 * 0.2) as usize);
        let mut participation: Vec<f64> = (0..k).map(|_| rng.random_range(0.6..=1.0)).collect();
        let max_p = participation.iter().cloned().fold(f64::MIN, f64::max).max(1e-9);
        participation.iter_mut().for_each(|p| *p /= max_p);

        match class {
            EventClass::Voltage => {
                // Step sag/swell in |V| sustained by a slow exponential
                // recovery, with a reactive-power response.
                let amp = uniform_in(&mut rng, cfg.voltage_amp);
                let sign = if rng.random_range(0.0..1.0) < 0.5 { -1.0 } else { 1.0 };
                let tau = uniform_in(&mut rng, (2.5, 3.5)) * fs;
                for t in onset..w {
                    let decay = (-((t - onset) as f64) / tau).exp();
                    for (pmu, &p) in participation.iter().enumerate() {
                        let vi = values.idx3(t, pmu, Channel::VoltageMagnitude as usize);
                        values.data_mut()[vi] += sign * amp * p * decay;
                        let qi = values.idx3(t, pmu, Channel::ReactivePower as usize);
                        values.data_mut()[qi] -= sign * amp * 3.0 * p * decay;
                        let cross = CROSS_COUPLING * amp / EVENT_UNIT[Channel::VoltageMagnitude as usize]
                            * EVENT_UNIT[Channel::Frequency as usize];
                        let fi = values.idx3(t, pmu, Channel::Frequency as usize);
                        values.data_mut()[fi] += sign * cross * p * decay;
                    }
                }
            }
            EventClass::Frequency => {
                // Ramp-then-slow-recovery deviation in F with a governor
                // response on active power.
                let amp = uniform_in(&mut rng, cfg.freq_amp);
                let sign = if rng.random_range(0.0..1.0) < 0.5 { -1.0 } else { 1.0 };
                let ramp = (uniform_in(&mut rng, (0.25, 0.35)) * fs).max(1.0);
                let tau = uniform_in(&mut rng, (2.0, 3.0)) * fs;
                for t in onset..w {
                    let dt = (t - onset) as f64;
                    let shape = if dt < ramp {
                        dt / ramp
                    } else {
                        (-(dt - ramp) / tau).exp()
                    };
                    for (pmu, &p) in participation.iter().enumerate() {
                        let fi = values.idx3(t, pmu, Channel::Frequency as usize);
                        values.data_mut()[fi] += sign * amp * p * shape;
                        let pi = values.idx3(t, pmu, Channel::ActivePower as usize);
                        values.data_mut()[pi] -= sign * amp * 8.0 * p * shape;
                        let cross = CROSS_COUPLING * amp / EVENT_UNIT[Channel::Frequency as usize]
                            * EVENT_UNIT[Channel::VoltageMagnitude as usize];
                        let vi = values.idx3(t, pmu, Channel::VoltageMagnitude as usize);
                        values.data_mut()[vi] += sign * cross * p * shape;
                    }
                }
            }
            EventClass::Oscillation => {
                // Sustained sinusoid on P and Q from onset to the end.
                let amp = uniform_in(&mut rng, cfg.osc_amp);
                let freq = uniform_in(&mut rng, cfg.osc_freq_hz);
                let phase = rng.random_range(0.0..(2.0 * PI));
                for t in onset..w {
                    let arg = 2.0 * PI * freq * ((t - onset) as f64) / fs + phase;
                    let s_p = arg.sin();
                    let s_q = (arg + 0.8).sin();
                    for (pmu, &p) in participation.iter().enumerate() {
                        let pi = values.idx3(t, pmu, Channel::ActivePower as usize);
                        values.data_mut()[pi] += amp * p * s_p;
                        let qi = values.idx3(t, pmu, Channel::ReactivePower as usize);
                        values.data_mut()[qi] += amp * 0.6 * p * s_q;
                        let cross = CROSS_COUPLING * amp / EVENT_UNIT[Channel::ActivePower as usize]
                            * EVENT_UNIT[Channel::Frequency as usize];
                        let fi = values.idx3(t, pmu, Channel::Frequency as usize);
                        values.data_mut()[fi] += cross * p * s_p;
                    }
                }
            }
            EventClass::Normal => unreachable!(),
        }
    }

    add_noise(&mut values, cfg.noise_std, &mut rng);
    // Keep values exactly representable in 32 bits so dataset files
    // round-trip bit-exactly.
    values.quantize_f32();
    PmuWindow::new(values, fs).expect("generator produces valid windows")
}

fn add_noise(values: &mut Tensor, noise_std: f64, rng: &mut ChaCha8Rng) {
    for (i, v) in values.data_mut().iter_mut().enumerate() {
        let c = i % NUM_CHANNELS;
        let draw: f64 = rng.sample(StandardNormal);
        *v += NOISE_SCALE[c] * noise_std * draw;
    }
}

/// Frequency (Hz) of the dominant non-DC DFT bin of one (PMU, channel)
/// series, after mean removal.
pub fn dominant_frequency_hz(window: &PmuWindow, pmu: usize, channel: Channel) -> f64 {
    let (w, _) = window.dims();
    let series: Vec<f64> = (0..w)
        .map(|t| window.values().data()[window.values().idx3(t, pmu, channel as usize)])
        .collect();
    let mean = series.iter().sum::<f64>() / w as f64;
    let mut best_bin = 1;
    let mut best_mag = f64::MIN;
    for bin in 1..=w / 2 {
        let (mut re, mut im) = (0.0, 0.0);
        for (t, &v) in series.iter().enumerate() {
            let arg = -2.0 * PI * (bin * t) as f64 / w as f64;
            re += (v - mean) * arg.cos();
            im += (v - mean) * arg.sin();
        }
        let mag = re * re + im * im;
        if mag > best_mag {
            best_mag = mag;
            best_bin = bin;
        }
    }
    best_bin as f64 * window.sample_rate_hz() / w as f64
}
