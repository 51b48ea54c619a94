use super::*;
use crate::data::{generate_dataset, normalize, split, EventClass, GenConfig};
use proptest::prelude::*;

/// Test estimator that answers with a fixed noise tensor.
struct OracleEstimator {
    eps: Tensor,
}

impl NoiseEstimator for OracleEstimator {
    fn estimate_noise(&self, _x_t: &Tensor, _t: usize) -> Result<Tensor> {
        Ok(self.eps.clone())
    }
}

struct ZeroEstimator;

impl NoiseEstimator for ZeroEstimator {
    fn estimate_noise(&self, x_t: &Tensor, _t: usize) -> Result<Tensor> {
        Ok(Tensor::zeros_like(x_t))
    }
}

fn default_schedule() -> NoiseSchedule {
    linear_schedule(20, 1e-4, 0.02).unwrap()
}

#[test]
fn linear_schedule_endpoints_are_exact() {
    let s = default_schedule();
    assert_eq!(s.beta(1), 1e-4);
    assert_eq!(s.beta(20), 0.02);
    assert_eq!(s.alpha_bar(0), 1.0);
}

#[test]
fn alpha_bar_4_matches_direct_product() {
    let s = default_schedule();
    // Direct four-term product of (1 - beta_t) with betas from the ramp.
    let step = (0.02 - 1e-4) / 19.0;
    let mut prod = 1.0;
    for i in 0..4 {
        prod *= 1.0 - (1e-4 + step * i as f64);
    }
    assert!((s.alpha_bar(4) - prod).abs() < 1e-15);
    assert!((prod - 0.99333).abs() < 5e-6, "alpha_bar_4 = {prod}");
    // The truncation weight the default purifier uses (0.9966593...).
    assert!((prod.sqrt() - 0.99666).abs() < 2e-5);
}

#[test]
fn schedule_invariants() {
    let s = default_schedule();
    let mut recomputed = 1.0;
    for t in 1..=s.t_max() {
        assert!(s.alpha_bar(t) < s.alpha_bar(t - 1), "alpha_bar not strictly decreasing");
        recomputed *= s.alpha(t);
        assert!((s.alpha_bar(t) - recomputed).abs() < 1e-12);
        let ab = s.alpha_bar(t);
        let sum = ab.sqrt().powi(2) + (1.0 - ab).sqrt().powi(2);
        assert!((sum - 1.0).abs() < 1e-12);
        assert!(s.beta(t) > 0.0 && s.beta(t) < 1.0);
        if t > 1 {
            assert!(s.beta(t) >= s.beta(t - 1));
        }
    }
}

#[test]
fn schedule_rejects_bad_ranges() {
    assert!(linear_schedule(1, 1e-4, 0.02).is_err());
    assert!(linear_schedule(20, 0.0, 0.02).is_err());
    assert!(linear_schedule(20, 0.03, 0.02).is_err());
    assert!(linear_schedule(20, 1e-4, 1.0).is_err());
    assert!(NoiseSchedule::from_betas(vec![0.02, 0.01]).is_err());
}

fn random_tensor(shape: Vec<usize>, seed: u64) -> Tensor {
    let mut rng = rng::rng_for(seed, Stream::GradCheck, 4);
    rng::gaussian_tensor(shape, &mut rng)
}

#[test]
fn forward_diffuse_identity_when_alpha_bar_is_one() {
    // Hypothetical schedule with ab_1 = 1, built directly for the limit case.
    let sched = NoiseSchedule {
        betas: vec![0.0, 0.0],
        alpha_bars: vec![1.0, 1.0, 1.0],
    };
    let x0 = random_tensor(vec![6, 2], 1);
    let eps = random_tensor(vec![6, 2], 2);
    let x1 = forward_diffuse(&x0, 1, &eps, &sched).unwrap();
    assert_eq!(x1.data(), x0.data());
}

#[test]
fn forward_diffuse_zero_noise_is_pure_scaling() {
    let sched = default_schedule();
    let x0 = random_tensor(vec![4, 3], 3);
    let x4 = forward_diffuse(&x0, 4, &Tensor::zeros_like(&x0), &sched).unwrap();
    let scale = sched.alpha_bar(4).sqrt();
    for (a, b) in x4.data().iter().zip(x0.data()) {
        assert!((a - b * scale).abs() < 1e-15);
    }
    assert!(forward_diffuse(&x0, 0, &x0, &sched).is_err());
    assert!(forward_diffuse(&x0, 21, &x0, &sched).is_err());
}

#[test]
fn shared_noise_pairs_contract_by_sqrt_alpha_bar() {
    let sched = default_schedule();
    for seed in 0..20u64 {
        let x = random_tensor(vec![8, 4], seed * 3 + 1);
        let x_adv = x.add(&random_tensor(vec![8, 4], seed * 3 + 2).scale(0.05));
        let eps = random_tensor(vec![8, 4], seed * 3 + 3);
        for t in [1, 4, 10, 20] {
            let xt = forward_diffuse(&x, t, &eps, &sched).unwrap();
            let xt_adv = forward_diffuse(&x_adv, t, &eps, &sched).unwrap();
            let lhs = xt.sub(&xt_adv).l2_norm();
            let rhs = sched.alpha_bar(t).sqrt() * x.sub(&x_adv).l2_norm();
            assert!(
                (lhs - rhs).abs() <= 1e-9 * rhs,
                "t={t}: {lhs} vs {rhs}"
            );
            assert!(lhs <= x.sub(&x_adv).l2_norm());
        }
    }
}

#[test]
fn ddim_step_with_oracle_estimator_tracks_the_forward_map() {
    let sched = default_schedule();
    let x0 = random_tensor(vec![6, 4], 9);
    let eps = random_tensor(vec![6, 4], 10);
    let oracle = OracleEstimator { eps: eps.clone() };
    let x4 = forward_diffuse(&x0, 4, &eps, &sched).unwrap();

    // Jumping 4 -> 3 equals diffusing x0 directly to 3 with the same noise.
    let x3 = ddim_step(&x4, 4, 3, &oracle, &sched).unwrap();
    let want = forward_diffuse(&x0, 3, &eps, &sched).unwrap();
    for (a, b) in x3.data().iter().zip(want.data()) {
        assert!((a - b).abs() < 1e-9);
    }

    // Jumping straight to 0 recovers x0.
    let x0_hat = ddim_step(&x4, 4, 0, &oracle, &sched).unwrap();
    for (a, b) in x0_hat.data().iter().zip(x0.data()) {
        assert!((a - b).abs() < 1e-9);
    }
}

#[test]
fn ddim_step_with_zero_estimator_rescales() {
    let sched = default_schedule();
    let x4 = random_tensor(vec![5, 2], 11);
    let x2 = ddim_step(&x4, 4, 2, &ZeroEstimator, &sched).unwrap();
    let scale = (sched.alpha_bar(2) / sched.alpha_bar(4)).sqrt();
    for (a, b) in x2.data().iter().zip(x4.data()) {
        assert!((a - b * scale).abs() < 1e-12);
    }
}

#[test]
fn ddim_step_rejects_bad_order() {
    let sched = default_schedule();
    let x = random_tensor(vec![4, 2], 12);
    assert!(ddim_step(&x, 3, 3, &ZeroEstimator, &sched).is_err());
    assert!(ddim_step(&x, 2, 4, &ZeroEstimator, &sched).is_err());
    assert!(ddim_step(&x, 21, 0, &ZeroEstimator, &sched).is_err());
}

#[test]
fn tau_grids_match_the_rounding_rule() {
    assert_eq!(make_tau_grid(4, 2).unwrap(), vec![0, 2, 4]);
    assert_eq!(make_tau_grid(4, 3).unwrap(), vec![0, 1, 3, 4]);
    assert_eq!(make_tau_grid(4, 4).unwrap(), vec![0, 1, 2, 3, 4]);
    assert_eq!(make_tau_grid(4, 1).unwrap(), vec![0, 4]);
    assert!(make_tau_grid(4, 5).is_err());
    assert!(make_tau_grid(4, 0).is_err());
}

proptest! {
    #[test]
    fn tau_grid_is_strictly_increasing_with_kept_endpoints(t_star in 1usize..60, s_frac in 0.0f64..1.0) {
        let s = 1 + ((t_star - 1) as f64 * s_frac) as usize;
        let grid = make_tau_grid(t_star, s).unwrap();
        prop_assert_eq!(*grid.first().unwrap(), 0);
        prop_assert_eq!(*grid.last().unwrap(), t_star);
        prop_assert!(grid.windows(2).all(|w| w[0] < w[1]));
        prop_assert!(grid.len() <= s + 1);
    }
}

#[test]
fn purify_with_oracle_estimator_is_identity_for_every_grid() {
    let sched = default_schedule();
    for s in 1..=4usize {
        let pcfg = PurifyConfig::new(4, s, 77).unwrap();
        assert_eq!(pcfg.effective_s(), s);
        for case in 0..25u64 {
            let x = random_tensor(vec![6, 3], 100 + case);
            // The oracle must return exactly the noise purify will draw.
            let mut rng = rng::rng_for(pcfg.seed, Stream::PurifyNoise, 0);
            let eps = rng::gaussian_tensor(x.shape().to_vec(), &mut rng);
            let oracle = OracleEstimator { eps };
            let out = purify_values(&x, &oracle, &sched, &pcfg, pcfg.seed).unwrap();
            for (a, b) in out.data().iter().zip(x.data()) {
                assert!((a - b).abs() < 1e-8, "S={s} case {case}: {a} vs {b}");
            }
        }
    }
}

#[test]
fn purify_is_deterministic_given_seed() {
    let sched = default_schedule();
    let pcfg = PurifyConfig::new(4, 3, 11).unwrap();
    let x = random_tensor(vec![6, 3], 55);
    let a = purify_values(&x, &ZeroEstimator, &sched, &pcfg, 11).unwrap();
    let b = purify_values(&x, &ZeroEstimator, &sched, &pcfg, 11).unwrap();
    assert_eq!(a.data(), b.data());
    let c = purify_values(&x, &ZeroEstimator, &sched, &pcfg, 12).unwrap();
    assert_ne!(a.data(), c.data());
}

#[test]
fn purify_batch_uses_per_sample_seeds() {
    let gen = GenConfig {
        window_len: 12,
        num_pmus: 2,
        samples_per_class: 3,
        seed: 3,
        ..GenConfig::default()
    };
    let ds = generate_dataset(&gen).unwrap();
    let windows: Vec<&crate::data::PmuWindow> = ds.samples.iter().take(4).map(|(w, _)| w).collect();
    let sched = default_schedule();
    let pcfg = PurifyConfig::new(4, 3, 500).unwrap();
    let batch = purify_batch(&windows, &ZeroEstimator, &sched, &pcfg).unwrap();
    for (i, w) in windows.iter().enumerate() {
        let seed = rng::derive_seed(pcfg.seed, Stream::PurifyNoise, i as u64);
        let single = purify_values(w.values(), &ZeroEstimator, &sched, &pcfg, seed).unwrap();
        assert_eq!(batch[i].values().data(), single.data());
    }
}

#[test]
fn theorem2_constants_are_positive() {
    let sched = default_schedule();
    for t_from in 2..=sched.t_max() {
        for t_to in 1..t_from {
            let (c_eps, c_t) = theorem2_constants(&sched, t_from, t_to);
            assert!(c_eps > 0.0, "c_eps({t_from},{t_to}) = {c_eps}");
            assert!(c_t > 0.0, "c_t({t_from},{t_to}) = {c_t}");
        }
    }
}

#[test]
fn untrained_estimator_equals_zero_predictor_baseline() {
    let gen = GenConfig {
        window_len: 12,
        num_pmus: 2,
        samples_per_class: 6,
        seed: 9,
        ..GenConfig::default()
    };
    let ds = normalize(&split(&generate_dataset(&gen).unwrap(), (0.6, 0.2, 0.2), 1).unwrap()).unwrap();
    let cfg = EstimatorConfig {
        hidden_channels: 8,
        embed_dim: 8,
        ..EstimatorConfig::default()
    };
    let net = build_estimator(12, 2, &cfg).unwrap();
    let sched = default_schedule();
    let val = ds.split_samples(crate::data::SplitKind::Val).unwrap();
    // Draws fixed by hand; the untrained net outputs exactly zero, so its
    // loss must equal the zero predictor's mean |eps|^2 on the same draws.
    let mut zero_loss = 0.0;
    let mut net_loss = 0.0;
    for (i, (window, _)) in val.iter().enumerate() {
        let mut rng = rng::rng_for(3, Stream::DiffusionTrain, i as u64);
        let t = rng.random_range(1..=sched.t_max());
        let eps = rng::gaussian_tensor(window.values().shape().to_vec(), &mut rng);
        let x_t = forward_diffuse(window.values(), t, &eps, &sched).unwrap();
        let eps_hat = net.estimate_noise(&x_t, t).unwrap();
        assert!(eps_hat.data().iter().all(|&v| v == 0.0));
        net_loss += noise_loss(&eps, &eps_hat).0;
        zero_loss += eps.data().iter().map(|v| v * v).sum::<f64>() / eps.len() as f64;
    }
    assert!((net_loss - zero_loss).abs() < 1e-12);
    // And the baseline itself is ~1.0, the closed-form expectation.
    assert!((zero_loss / val.len() as f64 - 1.0).abs() < 0.2);
}

#[test]
fn training_beats_zero_predictor_and_loss_decreases_on_constant_data() {
    // Constant-zero dataset, tiny net, tiny schedule: the estimator must
    // learn the linear map eps_hat = x_t / sqrt(1 - ab_t) well enough for a
    // monotone first-10-epoch loss decrease.
    let gen = GenConfig {
        window_len: 24,
        num_pmus: 4,
        samples_per_class: 50,
        seed: 9,
        ..GenConfig::default()
    };
    let mut ds = split(&generate_dataset(&gen).unwrap(), (0.6, 0.2, 0.2), 1).unwrap();
    for (w, _) in &mut ds.samples {
        w.values_mut().data_mut().fill(0.0);
    }
    ds.normalized = true; // constant zeros cannot be z-scored; mark as-is
    // High-noise two-step schedule: the ideal estimate is a mild gain map,
    // and with this many samples each epoch's improvement dwarfs the
    // per-epoch draw variance.
    let sched = NoiseSchedule::from_betas(vec![0.3, 0.4]).unwrap();
    let cfg = EstimatorConfig {
        hidden_channels: 6,
        embed_dim: 4,
        epochs: 10,
        batch_size: 12,
        learning_rate: 1e-2,
        seed: 4,
        ..EstimatorConfig::default()
    };
    let (_, history) = train_noise_estimator(&ds, &sched, &cfg).unwrap();
    for pair in history.windows(2) {
        assert!(
            pair[1].train_loss < pair[0].train_loss,
            "loss rose between epochs {} and {}: {} -> {}",
            pair[0].epoch,
            pair[1].epoch,
            pair[0].train_loss,
            pair[1].train_loss
        );
    }

    // On real micro data, a briefly trained estimator beats the zero
    // predictor's closed-form baseline of 1.0 on validation loss.
    let real_gen = GenConfig {
        window_len: 16,
        num_pmus: 2,
        samples_per_class: 20,
        seed: 9,
        ..GenConfig::default()
    };
    let real = normalize(&split(&generate_dataset(&real_gen).unwrap(), (0.6, 0.2, 0.2), 1).unwrap()).unwrap();
    let sched20 = default_schedule();
    let cfg_real = EstimatorConfig {
        hidden_channels: 12,
        embed_dim: 8,
        epochs: 30,
        batch_size: 8,
        learning_rate: 5e-3,
        seed: 4,
        ..EstimatorConfig::default()
    };
    let (_, hist) = train_noise_estimator(&real, &sched20, &cfg_real).unwrap();
    let best = hist.iter().map(|h| h.val_loss).fold(f64::MAX, f64::min);
    assert!(best < 1.0, "val loss {best} did not beat the zero predictor");
}

#[test]
fn label_type_is_compact() {
    // Labels travel with windows throughout the diffusion pipeline; keep the
    // pairing type small.
    assert_eq!(std::mem::size_of::<EventClass>(), 1);
}

