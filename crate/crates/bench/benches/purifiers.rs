//! Criterion benchmarks for the purifiers and the network engine at desk
//! scale (W = 60, K = 8). Complements the wall-clock latency table the CLI
//! `bench` subcommand produces.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use pmu_purify_core::baselines::{
    butter_design, event_participation_purify, feature_squeeze, lowpass_filter, svd_purify,
};
use pmu_purify_core::classifier::{build_classifier, ClassifierConfig};
use pmu_purify_core::data::{generate_dataset, per_channel_min_max, GenConfig, PmuWindow};
use pmu_purify_core::diffusion::{
    build_estimator, linear_schedule, purify_values, EstimatorConfig, PurifyConfig,
};
use std::hint::black_box;

fn desk_window(num_pmus: usize) -> PmuWindow {
    let gen = GenConfig {
        window_len: 60,
        num_pmus,
        samples_per_class: 1,
        seed: 42,
        ..GenConfig::default()
    };
    generate_dataset(&gen).unwrap().samples[0].0.clone()
}

fn bench_purifiers(c: &mut Criterion) {
    let window = desk_window(8);
    let ranges = per_channel_min_max(&[&window]);
    let filter = butter_design(10, 10.0, 30.0).unwrap();
    let estimator = build_estimator(60, 8, &EstimatorConfig::default()).unwrap();
    let schedule = linear_schedule(20, 1e-4, 0.02).unwrap();
    let pcfg = PurifyConfig::new(4, 3, 11).unwrap();

    let mut group = c.benchmark_group("purify_window");
    group.bench_function("feature_squeezing", |b| {
        b.iter(|| feature_squeeze(black_box(&window), 8, 3, &ranges).unwrap())
    });
    group.bench_function("lowpass", |b| {
        b.iter(|| lowpass_filter(black_box(&window), &filter))
    });
    group.bench_function("svd", |b| {
        b.iter(|| svd_purify(black_box(&window), 5).unwrap())
    });
    group.bench_function("event_decomposition", |b| {
        b.iter(|| event_participation_purify(black_box(&window)).unwrap())
    });
    group.bench_function("diffusion", |b| {
        b.iter(|| purify_values(black_box(window.values()), &estimator, &schedule, &pcfg, 5).unwrap())
    });
    group.finish();
}

fn bench_scaling(c: &mut Criterion) {
    let mut group = c.benchmark_group("svd_vs_diffusion_scaling");
    for k in [8usize, 16, 32] {
        let window = desk_window(k);
        group.bench_with_input(BenchmarkId::new("svd", k), &window, |b, w| {
            b.iter(|| svd_purify(w, 5).unwrap())
        });
        let estimator = build_estimator(60, k, &EstimatorConfig::default()).unwrap();
        let schedule = linear_schedule(20, 1e-4, 0.02).unwrap();
        let pcfg = PurifyConfig::new(4, 3, 11).unwrap();
        group.bench_with_input(BenchmarkId::new("diffusion", k), &window, |b, w| {
            b.iter(|| purify_values(w.values(), &estimator, &schedule, &pcfg, 5).unwrap())
        });
    }
    group.finish();
}

fn bench_network(c: &mut Criterion) {
    let window = desk_window(8);
    let net = build_classifier(60, 8, &ClassifierConfig::default()).unwrap();
    let mut group = c.benchmark_group("classifier");
    group.bench_function("forward", |b| {
        b.iter(|| net.infer(black_box(window.values()), None).unwrap())
    });
    group.bench_function("forward_backward", |b| {
        b.iter(|| {
            let (out, cache) = net.forward(black_box(window.values())).unwrap();
            let grad = pmu_purify_core::Tensor::new(vec![out.len()], vec![1.0; out.len()]).unwrap();
            net.backward(&cache, &grad).unwrap()
        })
    });
    group.finish();
}

criterion_group!(benches, bench_purifiers, bench_scaling, bench_network);
criterion_main!(benches);
