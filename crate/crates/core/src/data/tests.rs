use super::generate::dominant_frequency_hz;
use super::*;

fn micro_cfg() -> GenConfig {
    GenConfig {
        window_len: 24,
        num_pmus: 3,
        samples_per_class: 12,
        seed: 7,
        ..GenConfig::default()
    }
}

#[test]
fn zero_noise_zero_amplitude_normal_windows_are_constant() {
    let cfg = GenConfig {
        noise_std: 0.0,
        voltage_amp: (0.0, 0.0),
        freq_amp: (0.0, 0.0),
        osc_amp: (0.0, 0.0),
        ..micro_cfg()
    };
    let ds = generate_dataset(&cfg).unwrap();
    let (w, k) = (cfg.window_len, cfg.num_pmus);
    for (window, label) in &ds.samples {
        if *label != EventClass::Normal {
            continue;
        }
        for pmu in 0..k {
            for c in 0..NUM_CHANNELS {
                let first = window.values().data()[window.values().idx3(0, pmu, c)];
                for t in 1..w {
                    let v = window.values().data()[window.values().idx3(t, pmu, c)];
                    assert_eq!(v, first, "channel {c} pmu {pmu} varies without noise");
                }
            }
        }
    }
}

#[test]
fn generation_is_deterministic() {
    let cfg = micro_cfg();
    let a = generate_dataset(&cfg).unwrap();
    let b = generate_dataset(&cfg).unwrap();
    assert_eq!(a, b);
    let c = generate_dataset(&GenConfig { seed: 8, ..cfg }).unwrap();
    assert_ne!(a, c);
}

#[test]
fn zero_samples_per_class_rejected() {
    let cfg = GenConfig {
        samples_per_class: 0,
        ..GenConfig::default()
    };
    assert!(generate_dataset(&cfg).is_err());
}

#[test]
fn split_sizes_and_rejections() {
    let cfg = GenConfig {
        samples_per_class: 25,
        ..micro_cfg()
    };
    let ds = generate_dataset(&cfg).unwrap();
    let split_ds = split(&ds, (0.6, 0.2, 0.2), 3).unwrap();
    let s = split_ds.splits().unwrap();
    assert_eq!(s.train.len(), 60);
    assert_eq!(s.val.len(), 20);
    assert_eq!(s.test.len(), 20);

    assert!(split(&ds, (1.0, 0.0, 0.0), 3).is_err());
    assert!(split(&ds, (0.5, 0.2, 0.2), 3).is_err());
}

#[test]
fn split_is_stratified_and_deterministic() {
    let ds = generate_dataset(&micro_cfg()).unwrap();
    let a = split(&ds, (0.6, 0.2, 0.2), 11).unwrap();
    let b = split(&ds, (0.6, 0.2, 0.2), 11).unwrap();
    assert_eq!(a.splits, b.splits);

    let s = a.splits().unwrap();
    let count_classes = |idx: &[usize]| {
        let mut counts = [0usize; NUM_CLASSES];
        for &i in idx {
            counts[ds.samples[i].1.index()] += 1;
        }
        counts
    };
    // Per-class proportions in each split within one sample of the overall
    // fraction (12 per class here).
    for (frac, idx) in [(0.6, &s.train), (0.2, &s.val), (0.2, &s.test)] {
        for &got in count_classes(idx).iter() {
            let want = frac * 12.0;
            assert!(
                (got as f64 - want).abs() <= 1.0,
                "split fraction {frac}: got {got} of 12"
            );
        }
    }
    // Disjoint and exhaustive.
    let mut all: Vec<usize> = s.train.iter().chain(&s.val).chain(&s.test).copied().collect();
    all.sort_unstable();
    assert_eq!(all, (0..ds.len()).collect::<Vec<_>>());
}

#[test]
fn normalize_round_trip_and_train_stats() {
    let ds = split(&generate_dataset(&micro_cfg()).unwrap(), (0.6, 0.2, 0.2), 3).unwrap();
    let norm = normalize(&ds).unwrap();
    let stats = norm.stats().unwrap().clone();

    // Round trip within 1e-6.
    for (orig, normed) in ds.samples.iter().zip(&norm.samples) {
        let back = denormalize(&normed.0, &stats);
        for (a, b) in orig.0.values().data().iter().zip(back.values().data()) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
    }

    // Training split is zero-mean unit-variance per channel after scoring.
    let train = norm.split_samples(SplitKind::Train).unwrap();
    let mut sum = [0.0; NUM_CHANNELS];
    let mut sum_sq = [0.0; NUM_CHANNELS];
    let mut n = [0usize; NUM_CHANNELS];
    for (wnd, _) in train {
        for (i, &v) in wnd.values().data().iter().enumerate() {
            let c = i % NUM_CHANNELS;
            sum[c] += v;
            sum_sq[c] += v * v;
            n[c] += 1;
        }
    }
    let mut test_differs = false;
    for c in 0..NUM_CHANNELS {
        let mean = sum[c] / n[c] as f64;
        let var = sum_sq[c] / n[c] as f64 - mean * mean;
        assert!(mean.abs() < 1e-6, "channel {c} mean {mean}");
        assert!((var.sqrt() - 1.0).abs() < 1e-6, "channel {c} std {}", var.sqrt());
    }
    // Leak check: the test split must not come out exactly zero-mean.
    let test_split = norm.split_samples(SplitKind::Test).unwrap();
    for c in 0..NUM_CHANNELS {
        let mut s = 0.0;
        let mut cnt = 0usize;
        for (wnd, _) in &test_split {
            for (i, &v) in wnd.values().data().iter().enumerate() {
                if i % NUM_CHANNELS == c {
                    s += v;
                    cnt += 1;
                }
            }
        }
        if (s / cnt as f64).abs() > 1e-9 {
            test_differs = true;
        }
    }
    assert!(test_differs, "test split suspiciously normalized: stats leak?");
}

#[test]
fn zero_variance_channel_rejected() {
    let cfg = GenConfig {
        noise_std: 0.0,
        voltage_amp: (0.0, 0.0),
        freq_amp: (0.0, 0.0),
        osc_amp: (0.0, 0.0),
        ..micro_cfg()
    };
    // With no noise and no events, F varies only through per-PMU jitter; to
    // force exact zero variance, collapse every window to one constant.
    let mut ds = generate_dataset(&cfg).unwrap();
    for (wnd, _) in &mut ds.samples {
        wnd.values_mut().data_mut().fill(1.0);
    }
    let ds = split(&ds, (0.6, 0.2, 0.2), 3).unwrap();
    assert!(normalize(&ds).is_err());
}

#[test]
fn oscillation_windows_have_in_band_spectral_peak() {
    let cfg = micro_cfg();
    let ds = generate_dataset(&cfg).unwrap();
    let bin_width = cfg.sample_rate_hz / cfg.window_len as f64;
    for (window, label) in &ds.samples {
        if *label != EventClass::Oscillation {
            continue;
        }
        let in_band = (0..cfg.num_pmus).any(|pmu| {
            let f = dominant_frequency_hz(window, pmu, Channel::ActivePower);
            f >= cfg.osc_freq_hz.0 - bin_width && f <= cfg.osc_freq_hz.1 + bin_width
        });
        assert!(in_band, "no P channel peaks inside the oscillation band");
    }
}

#[test]
fn voltage_windows_depart_at_onset() {
    // Exact contract on the noiseless configuration: the injected step
    // departs from the pre-onset level by at least the configured minimum.
    // Window long enough that the onset (>= 0.1 W) leaves a clean
    // pre-onset mean for the measurement below.
    let cfg = GenConfig {
        noise_std: 0.0,
        window_len: 40,
        ..micro_cfg()
    };
    let ds = generate_dataset(&cfg).unwrap();
    let (w, k) = (cfg.window_len, cfg.num_pmus);
    let departure_of = |window: &PmuWindow| {
        let mut max_departure = 0.0f64;
        for pmu in 0..k {
            let series: Vec<f64> = (0..w)
                .map(|t| {
                    window.values().data()
                        [window.values().idx3(t, pmu, Channel::VoltageMagnitude as usize)]
                })
                .collect();
            let mut pre_sum = series[..3].iter().sum::<f64>();
            for t in 3..w {
                let pre_mean = pre_sum / t as f64;
                max_departure = max_departure.max((series[t] - pre_mean).abs());
                pre_sum += series[t];
            }
        }
        max_departure
    };
    for (window, label) in &ds.samples {
        if *label != EventClass::Voltage {
            continue;
        }
        let d = departure_of(window);
        assert!(
            d >= cfg.voltage_amp.0,
            "departure {d} below configured minimum {}",
            cfg.voltage_amp.0
        );
    }
    // With the default noise floor the departure stays within measurement
    // slack of the configured minimum.
    let noisy_cfg = GenConfig {
        window_len: 40,
        ..micro_cfg()
    };
    let noisy = generate_dataset(&noisy_cfg).unwrap();
    for (window, label) in &noisy.samples {
        if *label != EventClass::Voltage {
            continue;
        }
        let d = departure_of(window);
        assert!(d >= 0.6 * noisy_cfg.voltage_amp.0, "noisy departure {d}");
    }
}

#[test]
fn save_load_round_trip() {
    let dir = std::env::temp_dir().join(format!("pmu-ds-{}", std::process::id()));
    let ds = split(&generate_dataset(&micro_cfg()).unwrap(), (0.6, 0.2, 0.2), 3).unwrap();
    save_dataset(&ds, &dir).unwrap();
    let loaded = load_dataset(&dir).unwrap();
    assert_eq!(ds, loaded);

    // Truncate the windows blob by one byte: explicit load error.
    let blob_path = dir.join("windows.f32");
    let blob = std::fs::read(&blob_path).unwrap();
    std::fs::write(&blob_path, &blob[..blob.len() - 1]).unwrap();
    let err = load_dataset(&dir).unwrap_err();
    assert!(err.to_string().contains("byte"), "{err}");
    std::fs::write(&blob_path, blob).unwrap();

    // Manifest/dim mismatch: explicit load error.
    let manifest_path = dir.join("manifest.json");
    let text = std::fs::read_to_string(&manifest_path).unwrap();
    std::fs::write(&manifest_path, text.replace("\"num_pmus\": 3", "\"num_pmus\": 4")).unwrap();
    assert!(load_dataset(&dir).is_err());

    std::fs::remove_dir_all(&dir).ok();
}
