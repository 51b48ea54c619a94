//! Self-contained invariant suite behind the `verify` subcommand.
//!
//! Runs with no network access and no pretrained artifacts: everything it
//! needs is built at micro scale on the spot. One pass/fail line per check;
//! soft diagnostics are printed but never fail the run.

use crate::attacks::{bim, cw_l2, deepfool, fgsm, pgd};
use crate::baselines::{butter_design, compact_svd, gain_at, max_pole_magnitude};
use crate::classifier::build_classifier;
use crate::config::RunConfig;
use crate::data::{generate_dataset, normalize, split};
use crate::diffusion::{
    build_estimator, forward_diffuse, linear_schedule, make_tau_grid, purify_values,
    NoiseEstimator, PurifyConfig,
};
use crate::error::Result;
use crate::nn::{grad_check, LayerSpec, Network};
use crate::rng::{self, Stream};
use crate::tensor::Tensor;

pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

struct OracleEstimator {
    eps: Tensor,
}

impl NoiseEstimator for OracleEstimator {
    fn estimate_noise(&self, _x_t: &Tensor, _t: usize) -> Result<Tensor> {
        Ok(self.eps.clone())
    }
}

/// Run the whole suite, printing one line per check. Returns true when every
/// check passed.
pub fn run_verify(out_dir: &std::path::Path) -> Result<bool> {
    let mut results = Vec::new();
    results.push(check_layer_gradients());
    results.push(check_full_network_gradients());
    results.push(check_forward_scaling());
    results.push(check_ddim_identity());
    results.push(check_tau_grids());
    results.push(check_schedule_invariants());
    results.push(check_butterworth_gains());
    results.push(check_svd_contracts());
    results.push(check_attack_budgets());
    results.push(check_micro_pipeline(out_dir));

    let mut all = true;
    for r in &results {
        let tag = if r.passed { "pass" } else { "FAIL" };
        println!("[{tag}] {}: {}", r.name, r.detail);
        all &= r.passed;
    }
    Ok(all)
}

fn outcome(name: &'static str, passed: bool, detail: String) -> CheckOutcome {
    CheckOutcome {
        name,
        passed,
        detail,
    }
}

fn check_layer_gradients() -> CheckOutcome {
    let cases: Vec<(Vec<usize>, Vec<LayerSpec>)> = vec![
        (vec![5], vec![LayerSpec::Dense { units: 4 }]),
        (vec![8, 3], vec![LayerSpec::Conv1dTime { kernel: 3, channels: 4 }]),
        (vec![6], vec![LayerSpec::Dense { units: 5 }, LayerSpec::Relu]),
        (vec![6, 3], vec![LayerSpec::GlobalAveragePoolTime]),
        (vec![5, 3], vec![LayerSpec::TimeEmbeddingAdd { embed_dim: 6 }]),
        (
            vec![4, 3],
            vec![LayerSpec::Reshape { shape: vec![12] }, LayerSpec::Dense { units: 2 }],
        ),
    ];
    let mut worst = 0.0f64;
    for (shape, layers) in cases {
        for seed in 0..5u64 {
            match Network::new(shape.clone(), layers.clone(), seed)
                .and_then(|net| grad_check(&net, seed))
            {
                Ok(err) => worst = worst.max(err),
                Err(e) => return outcome("layer-gradients", false, e.to_string()),
            }
        }
    }
    outcome(
        "layer-gradients",
        worst < 1e-4,
        format!("max rel err {worst:.3e} (tolerance 1e-4)"),
    )
}

fn check_full_network_gradients() -> CheckOutcome {
    let clf = build_classifier(
        10,
        2,
        &crate::classifier::ClassifierConfig {
            conv_channels: vec![6, 8],
            ..Default::default()
        },
    );
    let est = build_estimator(
        10,
        2,
        &crate::diffusion::EstimatorConfig {
            hidden_channels: 6,
            embed_dim: 8,
            ..Default::default()
        },
    );
    let mut worst = 0.0f64;
    for net in [clf, est] {
        let mut net = match net {
            Ok(n) => n,
            Err(e) => return outcome("network-gradients", false, e.to_string()),
        };
        // A zeroed head hides downstream gradients; perturb it first.
        if net.needs_time() {
            let mut r = rng::rng_for(3, Stream::GradCheck, 70);
            let n_params = net.params().len();
            for t in [n_params - 2, n_params - 1] {
                for v in net.params_mut()[t].data_mut() {
                    *v = 0.05 * rng::uniform_in(&mut r, (-1.0, 1.0));
                }
            }
        }
        for seed in 0..5u64 {
            match grad_check(&net, seed) {
                Ok(err) => worst = worst.max(err),
                Err(e) => return outcome("network-gradients", false, e.to_string()),
            }
        }
    }
    outcome(
        "network-gradients",
        worst < 1e-4,
        format!("max rel err {worst:.3e} over both architectures"),
    )
}

fn check_forward_scaling() -> CheckOutcome {
    let sched = linear_schedule(20, 1e-4, 0.02).expect("default schedule");
    let mut worst = 0.0f64;
    for seed in 0..50u64 {
        let mut r = rng::rng_for(seed, Stream::GradCheck, 91);
        let x = rng::gaussian_tensor(vec![8, 4], &mut r);
        let x_adv = x.add(&rng::gaussian_tensor(vec![8, 4], &mut r).scale(0.05));
        let eps = rng::gaussian_tensor(vec![8, 4], &mut r);
        for t in [1usize, 4, 12, 20] {
            let xt = forward_diffuse(&x, t, &eps, &sched).expect("forward");
            let xt_adv = forward_diffuse(&x_adv, t, &eps, &sched).expect("forward");
            let lhs = xt.sub(&xt_adv).l2_norm();
            let rhs = sched.alpha_bar(t).sqrt() * x.sub(&x_adv).l2_norm();
            worst = worst.max((lhs - rhs).abs() / rhs);
        }
    }
    outcome(
        "forward-l2-scaling",
        worst <= 1e-9,
        format!("max rel deviation {worst:.3e} (tolerance 1e-9)"),
    )
}

fn check_ddim_identity() -> CheckOutcome {
    let sched = linear_schedule(20, 1e-4, 0.02).expect("default schedule");
    let mut worst = 0.0f64;
    for s in 1..=4usize {
        let pcfg = match PurifyConfig::new(4, s, 33) {
            Ok(p) => p,
            Err(e) => return outcome("ddim-oracle-identity", false, e.to_string()),
        };
        for case in 0..25u64 {
            let mut r = rng::rng_for(case, Stream::GradCheck, 92);
            let x = rng::gaussian_tensor(vec![8, 4], &mut r);
            let mut noise_rng = rng::rng_for(pcfg.seed, Stream::PurifyNoise, 0);
            let eps = rng::gaussian_tensor(x.shape().to_vec(), &mut noise_rng);
            let oracle = OracleEstimator { eps };
            match purify_values(&x, &oracle, &sched, &pcfg, pcfg.seed) {
                Ok(out) => {
                    for (a, b) in out.data().iter().zip(x.data()) {
                        worst = worst.max((a - b).abs());
                    }
                }
                Err(e) => return outcome("ddim-oracle-identity", false, e.to_string()),
            }
        }
    }
    outcome(
        "ddim-oracle-identity",
        worst < 1e-8,
        format!("max abs reconstruction error {worst:.3e} over S in 1..=4"),
    )
}

fn check_tau_grids() -> CheckOutcome {
    let ok = make_tau_grid(4, 2).map_or(false, |g| g == [0, 2, 4])
        && make_tau_grid(4, 3).map_or(false, |g| g == [0, 1, 3, 4])
        && make_tau_grid(4, 4).map_or(false, |g| g == [0, 1, 2, 3, 4])
        && make_tau_grid(4, 5).is_err();
    outcome("tau-grids", ok, "rounded backward grids".to_string())
}

fn check_schedule_invariants() -> CheckOutcome {
    let sched = match linear_schedule(20, 1e-4, 0.02) {
        Ok(s) => s,
        Err(e) => return outcome("noise-schedule", false, e.to_string()),
    };
    let mut ok = sched.alpha_bar(0) == 1.0 && sched.beta(1) == 1e-4 && sched.beta(20) == 0.02;
    let mut prod = 1.0;
    for t in 1..=20 {
        prod *= sched.alpha(t);
        ok &= (sched.alpha_bar(t) - prod).abs() < 1e-12;
        ok &= sched.alpha_bar(t) < sched.alpha_bar(t - 1);
    }
    outcome("noise-schedule", ok, "linear ramp and cumulative products".to_string())
}

fn check_butterworth_gains() -> CheckOutcome {
    let filt = match butter_design(10, 10.0, 30.0) {
        Ok(f) => f,
        Err(e) => return outcome("butterworth", false, e.to_string()),
    };
    let dc = gain_at(&filt, 0.0);
    let fc = gain_at(&filt, 10.0);
    let stop = gain_at(&filt, 14.0);
    let ok = (dc - 1.0).abs() < 1e-9
        && (fc - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-6
        && stop < 0.01
        && max_pole_magnitude(&filt) < 1.0;
    outcome(
        "butterworth",
        ok,
        format!("dc {dc:.12}, fc {fc:.9}, 14 Hz {stop:.2e}"),
    )
}

fn check_svd_contracts() -> CheckOutcome {
    let mut worst_rec = 0.0f64;
    let mut worst_ey = 0.0f64;
    for seed in 0..10u64 {
        let mut r = rng::rng_for(seed, Stream::GradCheck, 93);
        let m = rng::gaussian_tensor(vec![7, 5], &mut r);
        let f = match compact_svd(&m) {
            Ok(f) => f,
            Err(e) => return outcome("compact-svd", false, e.to_string()),
        };
        let full = f.reconstruct(5);
        worst_rec = worst_rec.max(m.sub(&full).l2_norm());
        for rank in 1..5 {
            let err = m.sub(&f.reconstruct(rank)).l2_norm();
            let tail: f64 = f.s[rank..].iter().map(|s| s * s).sum::<f64>().sqrt();
            worst_ey = worst_ey.max((err - tail).abs());
        }
    }
    outcome(
        "compact-svd",
        worst_rec < 1e-10 && worst_ey < 1e-8,
        format!("reconstruction {worst_rec:.2e}, Eckart-Young gap {worst_ey:.2e}"),
    )
}

fn check_attack_budgets() -> CheckOutcome {
    let gen = crate::data::GenConfig {
        window_len: 16,
        num_pmus: 2,
        samples_per_class: 6,
        seed: 44,
        ..Default::default()
    };
    let ds = match generate_dataset(&gen)
        .and_then(|d| split(&d, (0.6, 0.2, 0.2), 3))
        .and_then(|d| normalize(&d))
    {
        Ok(d) => d,
        Err(e) => return outcome("attack-budgets", false, e.to_string()),
    };
    let net = match build_classifier(
        16,
        2,
        &crate::classifier::ClassifierConfig {
            conv_channels: vec![6, 8],
            ..Default::default()
        },
    ) {
        Ok(n) => n,
        Err(e) => return outcome("attack-budgets", false, e.to_string()),
    };
    let xi = 0.05;
    let mut ok = true;
    for idx in [0usize, 7, 13] {
        let (x, y) = &ds.samples[idx];
        let checks: [crate::error::Result<crate::attacks::AttackResult>; 5] = [
            fgsm(&net, x, *y, xi),
            bim(&net, x, *y, xi, 0.005, 10),
            pgd(&net, x, *y, xi, 0.005, 10, idx as u64),
            deepfool(&net, x, *y, 20, 0.02),
            cw_l2(&net, x, *y, 10, 0.01, 1.0, 0.0),
        ];
        for (i, r) in checks.into_iter().enumerate() {
            match r {
                Ok(res) => {
                    ok &= res.perturbation.all_finite();
                    if i < 3 {
                        ok &= res.max_abs <= xi;
                    }
                    // The compromised window is exactly x + eta.
                    let recomposed = x.values().add(&res.perturbation);
                    ok &= recomposed.data() == res.adversarial.values().data();
                }
                Err(e) => return outcome("attack-budgets", false, e.to_string()),
            }
        }
    }
    outcome(
        "attack-budgets",
        ok,
        "budget clipping, finiteness, x' = x + eta".to_string(),
    )
}

fn check_micro_pipeline(out_root: &std::path::Path) -> CheckOutcome {
    let cfg = RunConfig::micro();
    let dir = out_root.join("verify-micro");
    let _ = std::fs::remove_dir_all(&dir);
    // Deterministic regeneration: the dataset stage is run twice into
    // sibling directories and must produce identical bytes.
    let run = || -> Result<Vec<u8>> {
        crate::pipeline::gen_data(&cfg, &dir)?;
        let bytes = std::fs::read(crate::pipeline::dataset_dir(&cfg, &dir).join("windows.f32"))
            .map_err(|e| crate::error::Error::io(&dir, e))?;
        Ok(bytes)
    };
    let first = match run() {
        Ok(b) => b,
        Err(e) => return outcome("micro-pipeline", false, e.to_string()),
    };
    let second = match run() {
        Ok(b) => b,
        Err(e) => return outcome("micro-pipeline", false, e.to_string()),
    };
    if first != second {
        return outcome(
            "micro-pipeline",
            false,
            "dataset regeneration is not byte-identical".to_string(),
        );
    }
    let result = (|| -> Result<(f64, f64)> {
        crate::pipeline::train_classifier_stage(&cfg, &dir)?;
        crate::pipeline::train_diffusion_stage(&cfg, &dir)?;
        crate::pipeline::attack_stage(&cfg, &dir, &[crate::attacks::AttackKind::Fgsm])?;
        // A one-attack grid exercises the full eval path.
        let mut small = cfg.clone();
        small.attacks.list = vec!["fgsm".to_string()];
        small.eval.l2_attack = "fgsm".to_string();
        let report = crate::pipeline::eval_grid_stage(&small, &dir)?;
        crate::pipeline::l2_trace_stage(&small, &dir, None)?;
        let clean = report.f1("none", "original").unwrap_or(f64::NAN);
        let attacked = report.f1("none", "fgsm").unwrap_or(f64::NAN);
        Ok((clean, attacked))
    })();
    let _ = std::fs::remove_dir_all(&dir);
    match result {
        Ok((clean, attacked)) => outcome(
            "micro-pipeline",
            clean.is_finite() && attacked.is_finite(),
            format!("clean F1 {clean:.3}, fgsm F1 {attacked:.3} at micro scale"),
        ),
        Err(e) => outcome("micro-pipeline", false, e.to_string()),
    }
}
