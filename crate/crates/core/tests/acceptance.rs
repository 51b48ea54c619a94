//! Acceptance suite: one test per criterion, each printing a pass/fail line.
//!
//! Criteria 4-7, 9, and 10 share one desk-scale pipeline build (fixed seeds)
//! under the cargo tmp dir. Run with `--nocapture` to see every line:
//!
//! ```bash
//! cargo test -p pmu-purify-core --test acceptance -- --nocapture --test-threads 1
//! ```

use pmu_purify_core::attacks::AttackKind;
use pmu_purify_core::classifier::ClassifierConfig;
use pmu_purify_core::config::RunConfig;
use pmu_purify_core::diffusion::{
    build_estimator, forward_diffuse, linear_schedule, purify_values, EstimatorConfig,
    NoiseEstimator, PurifyConfig,
};
use pmu_purify_core::eval::{run_l2_trace, run_latency_bench, EvalReport};
use pmu_purify_core::nn::{grad_check, LayerSpec, Network};
use pmu_purify_core::rng::{self, Stream};
use pmu_purify_core::tensor::Tensor;
use pmu_purify_core::{baselines, pipeline};
use std::path::PathBuf;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

fn check(name: &str, pass: bool, detail: String) {
    let tag = if pass { "PASS" } else { "FAIL" };
    println!("[{tag}] {name}: {detail}");
    assert!(pass, "{name}: {detail}");
}

struct Desk {
    out: PathBuf,
    cfg: RunConfig,
    report: EvalReport,
    build_time: Duration,
}

static DESK: OnceLock<Result<Desk, String>> = OnceLock::new();

fn desk() -> &'static Desk {
    let result = DESK.get_or_init(|| {
        let out = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance-desk");
        let _ = std::fs::remove_dir_all(&out);
        let cfg = RunConfig::desk();
        let start = Instant::now();
        let report = pipeline::run_full_pipeline(&cfg, &out).map_err(|e| e.to_string())?;
        Ok(Desk {
            out,
            cfg,
            report,
            build_time: start.elapsed(),
        })
    });
    result
        .as_ref()
        .unwrap_or_else(|e| panic!("desk pipeline build failed: {e}"))
}

fn grid_f1(report: &EvalReport, purifier: &str, attack: &str) -> f64 {
    report
        .f1(purifier, attack)
        .unwrap_or_else(|| panic!("missing grid cell ({purifier}, {attack})"))
}

/// Criterion 1: analytic gradients match central finite differences
/// (h = 1e-5, 64-bit) within relative error 1e-4, for every layer kind and
/// both full networks, on >= 20 seeded cases each, in under a minute.
#[test]
fn criterion_1_gradient_correctness() {
    let start = Instant::now();
    let mut worst = 0.0f64;
    let layer_cases: Vec<(Vec<usize>, Vec<LayerSpec>)> = vec![
        (vec![5], vec![LayerSpec::Dense { units: 4 }]),
        (vec![8, 4], vec![LayerSpec::Conv1dTime { kernel: 3, channels: 3 }]),
        (vec![7], vec![LayerSpec::Dense { units: 6 }, LayerSpec::Relu]),
        (vec![6, 3], vec![LayerSpec::GlobalAveragePoolTime]),
        (vec![5, 3], vec![LayerSpec::TimeEmbeddingAdd { embed_dim: 6 }]),
        (
            vec![6, 2],
            vec![LayerSpec::Reshape { shape: vec![12] }, LayerSpec::Dense { units: 3 }],
        ),
    ];
    for (shape, layers) in layer_cases {
        for seed in 0..20u64 {
            let net = Network::new(shape.clone(), layers.clone(), seed).unwrap();
            worst = worst.max(grad_check(&net, seed).unwrap());
        }
    }
    // Both full architectures at micro width.
    let clf_cfg = ClassifierConfig {
        conv_channels: vec![6, 8],
        ..ClassifierConfig::default()
    };
    let est_cfg = EstimatorConfig {
        hidden_channels: 6,
        embed_dim: 8,
        ..EstimatorConfig::default()
    };
    for seed in 0..20u64 {
        let clf = pmu_purify_core::classifier::build_classifier(12, 2, &clf_cfg).unwrap();
        worst = worst.max(grad_check(&clf, seed).unwrap());
        let mut est = build_estimator(12, 2, &est_cfg).unwrap();
        // The zero-initialized head would hide upstream gradients.
        let mut r = rng::rng_for(seed, Stream::GradCheck, 77);
        let n_params = est.params().len();
        for t in [n_params - 2, n_params - 1] {
            for v in est.params_mut()[t].data_mut() {
                *v = 0.05 * rng::uniform_in(&mut r, (-1.0, 1.0));
            }
        }
        worst = worst.max(grad_check(&est, seed).unwrap());
    }
    let elapsed = start.elapsed();
    check(
        "criterion 1 (gradient correctness)",
        worst < 1e-4 && elapsed < Duration::from_secs(60),
        format!("max rel err {worst:.3e} over all layer kinds and both networks in {elapsed:.1?}"),
    );
}

/// Criterion 2: the truncated forward process scales pair distances exactly
/// by sqrt(alpha_bar_T*): 100 random pairs with shared noise, rel 1e-9.
#[test]
fn criterion_2_theorem_1_exact_scaling() {
    let sched = linear_schedule(20, 1e-4, 0.02).unwrap();
    let t_star = 4;
    let scale = sched.alpha_bar(t_star).sqrt();
    let mut worst = 0.0f64;
    for seed in 0..100u64 {
        let mut r = rng::rng_for(seed, Stream::GradCheck, 600);
        let x = rng::gaussian_tensor(vec![12, 4], &mut r);
        let x_adv = x.add(&rng::gaussian_tensor(vec![12, 4], &mut r).scale(0.05));
        let eps = rng::gaussian_tensor(vec![12, 4], &mut r);
        let xt = forward_diffuse(&x, t_star, &eps, &sched).unwrap();
        let xt_adv = forward_diffuse(&x_adv, t_star, &eps, &sched).unwrap();
        let lhs = xt.sub(&xt_adv).l2_norm();
        let rhs = scale * x.sub(&x_adv).l2_norm();
        worst = worst.max((lhs - rhs).abs() / rhs);
    }
    check(
        "criterion 2 (theorem 1 exact scaling)",
        worst <= 1e-9 && (scale - 0.99667).abs() < 2e-5,
        format!("max rel deviation {worst:.2e}; sqrt(ab_4) = {scale:.6}"),
    );
}

struct OracleEstimator {
    eps: Tensor,
}

impl NoiseEstimator for OracleEstimator {
    fn estimate_noise(&self, _x_t: &Tensor, _t: usize) -> pmu_purify_core::Result<Tensor> {
        Ok(self.eps.clone())
    }
}

/// Criterion 3: with an oracle estimator returning the true forward noise,
/// purify(x) = x within 1e-8 for 100 random windows and every tau grid with
/// T* = 4, S in 1..=4.
#[test]
fn criterion_3_ddim_oracle_identity() {
    let sched = linear_schedule(20, 1e-4, 0.02).unwrap();
    let mut worst = 0.0f64;
    for s in 1..=4usize {
        let pcfg = PurifyConfig::new(4, s, 99).unwrap();
        for case in 0..100u64 {
            let mut r = rng::rng_for(case, Stream::GradCheck, 700 + s as u64);
            let x = rng::gaussian_tensor(vec![10, 4], &mut r);
            let mut noise_rng = rng::rng_for(pcfg.seed, Stream::PurifyNoise, 0);
            let eps = rng::gaussian_tensor(x.shape().to_vec(), &mut noise_rng);
            let out = purify_values(&x, &OracleEstimator { eps }, &sched, &pcfg, pcfg.seed).unwrap();
            for (a, b) in out.data().iter().zip(x.data()) {
                worst = worst.max((a - b).abs());
            }
        }
    }
    check(
        "criterion 3 (ddim oracle identity)",
        worst < 1e-8,
        format!("max abs reconstruction error {worst:.2e} over S in 1..=4"),
    );
}

/// Criterion 4: on the pinned desk dataset, clean macro-F1 >= 0.90; each of
/// the five attacks costs >= 30 points; C&W yields the minimum F1.
#[test]
fn criterion_4_attack_efficacy() {
    let desk = desk();
    let clean = grid_f1(&desk.report, "none", "original");
    let mut details = format!("clean {clean:.3}");
    let mut all_drop = true;
    let mut min_f1 = f64::MAX;
    let mut cw_f1 = f64::NAN;
    for kind in AttackKind::ALL {
        let f1 = grid_f1(&desk.report, "none", kind.name());
        details.push_str(&format!(", {} {f1:.3}", kind.name()));
        if clean - f1 < 0.30 {
            all_drop = false;
        }
        min_f1 = min_f1.min(f1);
        if kind == AttackKind::Cw {
            cw_f1 = f1;
        }
    }
    let pass = clean >= 0.90
        && all_drop
        && cw_f1 <= min_f1
        && desk.build_time < Duration::from_secs(15 * 60);
    check(
        "criterion 4 (attack efficacy)",
        pass,
        format!("{details}; pipeline build {:.0?}", desk.build_time),
    );
}

/// Criterion 5: diffusion purification restores macro-F1 to within 10
/// points of clean under every attack, and strictly exceeds the feature
/// squeezing and low-pass baselines under PGD and C&W.
#[test]
fn criterion_5_purification_recovery() {
    let desk = desk();
    let clean = grid_f1(&desk.report, "none", "original");
    let mut within_10 = true;
    let mut details = String::new();
    for kind in AttackKind::ALL {
        let f1 = grid_f1(&desk.report, "diffusion", kind.name());
        details.push_str(&format!("{} {f1:.3} ", kind.name()));
        if clean - f1 > 0.10 {
            within_10 = false;
        }
    }
    let mut beats_baselines = true;
    for attack in ["pgd", "cw"] {
        let diff = grid_f1(&desk.report, "diffusion", attack);
        let squeeze = grid_f1(&desk.report, "feature_squeezing", attack);
        let lowpass = grid_f1(&desk.report, "lowpass", attack);
        details.push_str(&format!(
            "[{attack}: diffusion {diff:.3} vs squeeze {squeeze:.3}, lowpass {lowpass:.3}] "
        ));
        if diff <= squeeze || diff <= lowpass {
            beats_baselines = false;
        }
    }
    check(
        "criterion 5 (purification recovery)",
        within_10 && beats_baselines && desk.build_time < Duration::from_secs(20 * 60),
        details.trim_end().to_string(),
    );
}

/// Criterion 6: purifying unattacked test data moves macro-F1 by at most
/// 2 points.
#[test]
fn criterion_6_clean_non_degradation() {
    let desk = desk();
    let clean = grid_f1(&desk.report, "none", "original");
    let purified = grid_f1(&desk.report, "diffusion", "original");
    check(
        "criterion 6 (clean non-degradation)",
        (clean - purified).abs() <= 0.02,
        format!("clean {clean:.3} vs purified {purified:.3}"),
    );
}

/// Criterion 7: under each attack, the dataset-mean L2 trace is
/// non-increasing across every purification step, with at most 5% of
/// (sample, step) pairs increasing and none by more than 1% relative; the
/// forward segment is hard-asserted inside the trace computation.
#[test]
fn criterion_7_empirical_theorem_2() {
    let desk = desk();
    let plan = pipeline::plan_for(&desk.cfg.resolved(), &desk.out);
    let mut pass = true;
    let mut details = String::new();
    for kind in AttackKind::ALL {
        let trace = run_l2_trace(&plan, kind).unwrap_or_else(|e| panic!("trace {}: {e}", kind.name()));
        let means: Vec<f64> = trace.steps.iter().map(|s| s.mean_l2).collect();
        let non_increasing = means.windows(2).all(|w| w[1] <= w[0]);
        let ok = non_increasing
            && trace.violation_fraction <= 0.05
            && trace.max_violation_rel < 0.01;
        details.push_str(&format!(
            "[{}: trace {:.3} -> {:.3}, viol {:.1}% max {:.2}%{}] ",
            kind.name(),
            means.first().unwrap(),
            means.last().unwrap(),
            trace.violation_fraction * 100.0,
            trace.max_violation_rel * 100.0,
            if ok { "" } else { " X" },
        ));
        pass &= ok;
    }
    check("criterion 7 (empirical theorem 2)", pass, details.trim_end().to_string());
}

/// Criterion 8: Butterworth gain contract (DC, cutoff, stopband) and
/// compact-SVD reconstruction + Eckart-Young identity on 50 random matrices.
#[test]
fn criterion_8_baseline_numerics() {
    let filt = baselines::butter_design(10, 10.0, 30.0).unwrap();
    let dc = baselines::gain_at(&filt, 0.0);
    let fc = baselines::gain_at(&filt, 10.0);
    let stop = baselines::gain_at(&filt, 14.0);
    let butter_ok =
        (dc - 1.0).abs() < 1e-9 && (fc - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-6 && stop < 0.01;

    let mut worst_rec = 0.0f64;
    let mut worst_ey = 0.0f64;
    for seed in 0..50u64 {
        let mut r = rng::rng_for(seed, Stream::GradCheck, 800);
        let m = rng::gaussian_tensor(vec![8, 5], &mut r);
        let f = baselines::compact_svd(&m).unwrap();
        worst_rec = worst_rec.max(m.sub(&f.reconstruct(5)).l2_norm());
        for rank in 1..5 {
            let err = m.sub(&f.reconstruct(rank)).l2_norm();
            let tail: f64 = f.s[rank..].iter().map(|s| s * s).sum::<f64>().sqrt();
            worst_ey = worst_ey.max((err - tail).abs());
        }
    }
    check(
        "criterion 8 (baseline numerics)",
        butter_ok && worst_rec < 1e-10 && worst_ey < 1e-8,
        format!(
            "dc {dc:.10}, fc {fc:.8}, 14Hz {stop:.2e}; svd recon {worst_rec:.2e}, eckart-young {worst_ey:.2e}"
        ),
    );
}

/// Criterion 9: rerunning the whole pipeline from the emitted summary's
/// config reproduces the deterministic CSVs byte-identically.
#[test]
fn criterion_9_determinism() {
    let desk = desk();
    let summary_path = desk.out.join(&desk.cfg.paths.eval).join("summary.json");
    let summary = pmu_purify_core::eval::parse_summary(&summary_path).unwrap();

    let rerun_out = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance-rerun");
    let _ = std::fs::remove_dir_all(&rerun_out);
    pipeline::run_full_pipeline(&summary.config, &rerun_out).unwrap();

    let mut pass = true;
    let mut details = String::new();
    for file in ["f1_grid.csv", "l2_trace.csv", "summary.json"] {
        let a = std::fs::read(desk.out.join(&desk.cfg.paths.eval).join(file)).unwrap();
        let b = std::fs::read(rerun_out.join(&desk.cfg.paths.eval).join(file)).unwrap();
        let same = a == b;
        details.push_str(&format!("{file} {} ", if same { "identical" } else { "DIFFERS" }));
        pass &= same;
    }
    let _ = std::fs::remove_dir_all(&rerun_out);
    check("criterion 9 (byte-identical rerun)", pass, details.trim_end().to_string());
}

/// Criterion 10: decomposition purifiers' latency strictly increases with
/// the PMU count, and diffusion's relative growth from 8 to 64 PMUs is
/// smaller than the SVD method's.
#[test]
fn criterion_10_latency_shape() {
    let cfg = RunConfig::desk().resolved();
    let table = run_latency_bench(
        &cfg.purifiers,
        &cfg.diffusion,
        &[8, 16, 32, 64],
        cfg.eval.latency_window_len,
        cfg.eval.latency_reps,
        cfg.eval.latency_warmup,
    )
    .unwrap();
    let times = |name: &str| -> Vec<f64> {
        let mut rows: Vec<(usize, f64)> = table
            .rows
            .iter()
            .filter(|r| r.purifier == name)
            .map(|r| (r.pmu_count, r.mean_ms))
            .collect();
        rows.sort_by_key(|(k, _)| *k);
        rows.into_iter().map(|(_, ms)| ms).collect()
    };
    let svd = times("svd");
    let event = times("event_decomposition");
    let diffusion = times("diffusion");
    let strictly_increasing =
        |v: &[f64]| v.windows(2).all(|w| w[1] > w[0]) && v.iter().all(|&t| t > 0.0);
    let svd_growth = svd.last().unwrap() / svd.first().unwrap();
    let diff_growth = diffusion.last().unwrap() / diffusion.first().unwrap();
    let pass = strictly_increasing(&svd)
        && strictly_increasing(&event)
        && diff_growth < svd_growth;
    check(
        "criterion 10 (latency shape)",
        pass,
        format!(
            "svd {svd:.2?} (x{svd_growth:.1}), event {event:.2?}, diffusion {diffusion:.2?} (x{diff_growth:.1})"
        ),
    );
}
