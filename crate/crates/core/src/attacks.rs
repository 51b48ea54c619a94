//! Gradient-based adversarial attacks on the event classifier.
//!
//! Each attack produces a compromised window x' = x + eta intended to flip
//! the classifier's prediction. FGSM/BIM/PGD enforce a per-element (max-abs)
//! budget xi exactly; DeepFool and C&W minimize the L2 norm instead. Both
//! norms are always recorded so the two budget conventions stay visible side
//! by side.
//!
//! Attacks are pure per-sample functions of (net, x, y, config, seed): the
//! input window is never mutated and batch drivers are order-stable however
//! the work is scheduled.

use crate::classifier::argmax;
use crate::data::{EventClass, PmuWindow};
use crate::error::{Error, Result};
use crate::nn::{softmax_cross_entropy, Network};
use crate::rng::{self, Stream};
use crate::tensor::Tensor;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttackKind {
    Fgsm,
    Bim,
    Pgd,
    DeepFool,
    Cw,
}

impl AttackKind {
    pub const ALL: [AttackKind; 5] = [
        AttackKind::Fgsm,
        AttackKind::Pgd,
        AttackKind::Bim,
        AttackKind::DeepFool,
        AttackKind::Cw,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AttackKind::Fgsm => "fgsm",
            AttackKind::Bim => "bim",
            AttackKind::Pgd => "pgd",
            AttackKind::DeepFool => "deepfool",
            AttackKind::Cw => "cw",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == name)
            .ok_or_else(|| Error::config(format!("unknown attack {name:?}")))
    }
}

/// Attack hyperparameters. Published values: xi = 0.05; BIM/PGD run
/// I = 100 steps of alpha = 0.005; C&W runs 50 steps at lr = 0.01.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AttackConfig {
    pub xi: f64,
    pub alpha: f64,
    pub iters: usize,
    pub cw_iters: usize,
    pub cw_lr: f64,
    pub cw_c: f64,
    pub cw_kappa: f64,
    pub deepfool_max_iter: usize,
    pub deepfool_overshoot: f64,
    pub seed: u64,
}

impl Default for AttackConfig {
    fn default() -> Self {
        AttackConfig {
            xi: 0.05,
            alpha: 0.005,
            iters: 100,
            cw_iters: 50,
            cw_lr: 0.01,
            cw_c: 1.0,
            cw_kappa: 0.0,
            deepfool_max_iter: 50,
            deepfool_overshoot: 0.02,
            seed: 99,
        }
    }
}

impl AttackConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.xi > 0.0) {
            return Err(Error::config("attack budget xi must be > 0"));
        }
        if !(self.alpha > 0.0) {
            return Err(Error::config("attack step alpha must be > 0"));
        }
        if self.iters == 0 || self.cw_iters == 0 || self.deepfool_max_iter == 0 {
            return Err(Error::config("attack iteration counts must be >= 1"));
        }
        Ok(())
    }
}

/// Outcome of one attack. `adversarial = x + perturbation` exactly; the norm
/// fields are recomputed from the perturbation tensor at construction rather
/// than carried out of the optimization loop.
#[derive(Debug, Clone)]
pub struct AttackResult {
    pub adversarial: PmuWindow,
    pub perturbation: Tensor,
    pub success: bool,
    pub l2_norm: f64,
    pub max_abs: f64,
}

impl AttackResult {
    fn build(net: &Network, x: &PmuWindow, label: EventClass, eta: Tensor) -> Result<Self> {
        let adv_values = x.values().add(&eta);
        let adversarial = x.with_values(adv_values)?;
        let logits = net.infer(adversarial.values(), None)?;
        let success = argmax(logits.data()) != label.index();
        let l2_norm = eta.l2_norm();
        let max_abs = eta.max_abs();
        Ok(AttackResult {
            adversarial,
            perturbation: eta,
            success,
            l2_norm,
            max_abs,
        })
    }
}

fn one_hot(len: usize, idx: usize) -> Vec<f64> {
    let mut v = vec![0.0; len];
    v[idx] = 1.0;
    v
}

/// Cross-entropy input gradient: forward + softmax_cross_entropy + backward.
fn ce_input_grad(net: &Network, values: &Tensor, label_idx: usize) -> Result<Tensor> {
    let (logits, cache) = net.forward(values)?;
    let (_, logit_grad) = softmax_cross_entropy(&logits, &one_hot(logits.len(), label_idx))?;
    let (_, input_grad) = net.backward(&cache, &logit_grad)?;
    Ok(input_grad)
}

/// Value and input gradient of z_true - max_{j != true} z_j.
fn margin_input_grad(net: &Network, values: &Tensor, label_idx: usize) -> Result<(f64, Tensor)> {
    let (logits, cache) = net.forward(values)?;
    let z = logits.data();
    let mut runner_up = if label_idx == 0 { 1 } else { 0 };
    for j in 0..z.len() {
        if j != label_idx && z[j] > z[runner_up] {
            runner_up = j;
        }
    }
    let margin = z[label_idx] - z[runner_up];
    let mut g = vec![0.0; z.len()];
    g[label_idx] = 1.0;
    g[runner_up] = -1.0;
    let (_, input_grad) = net.backward(&cache, &Tensor::from_raw(vec![z.len()], g))?;
    Ok((margin, input_grad))
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// One-step sign attack: eta = xi * sign(grad_x CE). Every entry of eta is
/// in {-xi, 0, +xi}.
pub fn fgsm(net: &Network, x: &PmuWindow, label: EventClass, xi: f64) -> Result<AttackResult> {
    let grad = ce_input_grad(net, x.values(), label.index())?;
    let eta_data: Vec<f64> = grad.data().iter().map(|&g| xi * sign(g)).collect();
    let eta = Tensor::from_raw(x.values().shape().to_vec(), eta_data);
    AttackResult::build(net, x, label, eta)
}

fn iterative_sign_attack(
    net: &Network,
    x: &PmuWindow,
    label: EventClass,
    xi: f64,
    alpha: f64,
    iters: usize,
    init: Option<Tensor>,
) -> Result<AttackResult> {
    let mut eta = init.unwrap_or_else(|| Tensor::zeros_like(x.values()));
    for _ in 0..iters {
        let current = x.values().add(&eta);
        let grad = ce_input_grad(net, &current, label.index())?;
        for (e, &g) in eta.data_mut().iter_mut().zip(grad.data()) {
            *e = (*e + alpha * sign(g)).clamp(-xi, xi);
        }
    }
    AttackResult::build(net, x, label, eta)
}

/// Iterative FGSM with per-step element-wise clipping to the xi ball.
pub fn bim(
    net: &Network,
    x: &PmuWindow,
    label: EventClass,
    xi: f64,
    alpha: f64,
    iters: usize,
) -> Result<AttackResult> {
    iterative_sign_attack(net, x, label, xi, alpha, iters, None)
}

/// BIM with a Gaussian start: eta_0 ~ N(0, (xi/2)^2) clipped to the budget.
/// Deterministic given the seed.
pub fn pgd(
    net: &Network,
    x: &PmuWindow,
    label: EventClass,
    xi: f64,
    alpha: f64,
    iters: usize,
    seed: u64,
) -> Result<AttackResult> {
    let mut rng = rng::rng_for(seed, Stream::AttackInit, 0);
    let mut init = rng::gaussian_tensor(x.values().shape().to_vec(), &mut rng);
    for v in init.data_mut() {
        *v = (*v * xi / 2.0).clamp(-xi, xi);
    }
    iterative_sign_attack(net, x, label, xi, alpha, iters, Some(init))
}

/// Iterated linearized projection onto the nearest non-true decision
/// boundary, overshooting the accumulated perturbation by `1 + overshoot`.
/// Non-convergence yields a `success = false` result, not an error.
pub fn deepfool(
    net: &Network,
    x: &PmuWindow,
    label: EventClass,
    max_iter: usize,
    overshoot: f64,
) -> Result<AttackResult> {
    let label_idx = label.index();
    let mut r_total = Tensor::zeros_like(x.values());
    let mut current = x.values().clone();
    for _ in 0..max_iter {
        let (logits, cache) = net.forward(&current)?;
        let z = logits.data().to_vec();
        if argmax(&z) != label_idx {
            break;
        }
        let n_classes = z.len();
        let (_, g_true) = net.backward(
            &cache,
            &Tensor::from_raw(vec![n_classes], one_hot(n_classes, label_idx)),
        )?;
        // Nearest linearized boundary: argmin |z_j - z_true| / ||w_j||.
        let mut best: Option<(f64, Tensor, f64)> = None;
        for j in 0..n_classes {
            if j == label_idx {
                continue;
            }
            let (_, g_j) = net.backward(
                &cache,
                &Tensor::from_raw(vec![n_classes], one_hot(n_classes, j)),
            )?;
            let w = g_j.sub(&g_true);
            let w_norm = w.l2_norm();
            if w_norm * w_norm < 1e-18 {
                // Flat direction (e.g. a frozen classifier): no boundary here.
                continue;
            }
            let f = z[j] - z[label_idx];
            let dist = f.abs() / w_norm;
            if best.as_ref().map_or(true, |(d, _, _)| dist < *d) {
                best = Some((dist, w, f));
            }
        }
        let Some((_, w, f)) = best else {
            break; // every direction is flat; stop without NaN
        };
        let w_sq = w.l2_norm().powi(2);
        let step = w.scale(f.abs() / w_sq);
        r_total = r_total.add(&step);
        current = x.values().add(&r_total.scale(1.0 + overshoot));
    }
    let eta = r_total.scale(1.0 + overshoot);
    AttackResult::build(net, x, label, eta)
}

/// Carlini-Wagner L2: minimize ||eta||_2^2 + c * max(kappa, z_true - max_other)
/// by gradient descent on an unconstrained eta (z-scored data has no box).
/// Returns the successful iterate of lowest L2 norm, or the final iterate
/// when the attack never succeeds.
pub fn cw_l2(
    net: &Network,
    x: &PmuWindow,
    label: EventClass,
    iters: usize,
    lr: f64,
    c: f64,
    kappa: f64,
) -> Result<AttackResult> {
    let label_idx = label.index();
    let mut eta = Tensor::zeros_like(x.values());
    let mut best: Option<(f64, Tensor)> = None;
    let consider = |eta: &Tensor, best: &mut Option<(f64, Tensor)>| -> Result<()> {
        let logits = net.infer(&x.values().add(eta), None)?;
        if argmax(logits.data()) != label_idx {
            let norm = eta.l2_norm();
            if best.as_ref().map_or(true, |(n, _)| norm < *n) {
                *best = Some((norm, eta.clone()));
            }
        }
        Ok(())
    };
    for _ in 0..iters {
        consider(&eta, &mut best)?;
        let current = x.values().add(&eta);
        let (margin, margin_grad) = margin_input_grad(net, &current, label_idx)?;
        let active = c != 0.0 && margin > kappa;
        for (i, e) in eta.data_mut().iter_mut().enumerate() {
            let mut g = 2.0 * *e;
            if active {
                g += c * margin_grad.data()[i];
            }
            *e -= lr * g;
        }
    }
    consider(&eta, &mut best)?;
    let eta = best.map(|(_, e)| e).unwrap_or(eta);
    AttackResult::build(net, x, label, eta)
}

/// Dispatch one attack with the per-sample seed derived from (config seed,
/// sample index).
pub fn run_attack(
    net: &Network,
    x: &PmuWindow,
    label: EventClass,
    kind: AttackKind,
    cfg: &AttackConfig,
    sample_index: u64,
) -> Result<AttackResult> {
    match kind {
        AttackKind::Fgsm => fgsm(net, x, label, cfg.xi),
        AttackKind::Bim => bim(net, x, label, cfg.xi, cfg.alpha, cfg.iters),
        AttackKind::Pgd => pgd(
            net,
            x,
            label,
            cfg.xi,
            cfg.alpha,
            cfg.iters,
            rng::derive_seed(cfg.seed, Stream::AttackInit, sample_index),
        ),
        AttackKind::DeepFool => {
            deepfool(net, x, label, cfg.deepfool_max_iter, cfg.deepfool_overshoot)
        }
        AttackKind::Cw => cw_l2(net, x, label, cfg.cw_iters, cfg.cw_lr, cfg.cw_c, cfg.cw_kappa),
    }
}

/// One row of a batch attack; failures are flagged, never fatal.
#[derive(Debug, Clone)]
pub struct AttackRow {
    pub sample_index: usize,
    pub outcome: std::result::Result<AttackResult, String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttackSummary {
    pub kind: AttackKind,
    pub count: usize,
    pub successes: usize,
    pub success_rate: f64,
    pub mean_l2: f64,
    pub mean_max_abs: f64,
    pub flagged: usize,
}

/// Attack every sample in order. Per-sample failures become flagged rows;
/// the batch always completes. Deterministic given the config seed.
pub fn attack_dataset(
    net: &Network,
    samples: &[(&PmuWindow, EventClass)],
    kind: AttackKind,
    cfg: &AttackConfig,
) -> Result<(Vec<AttackRow>, AttackSummary)> {
    cfg.validate()?;
    let rows: Vec<AttackRow> = samples
        .par_iter()
        .enumerate()
        .map(|(i, (x, label))| AttackRow {
            sample_index: i,
            outcome: run_attack(net, x, *label, kind, cfg, i as u64).map_err(|e| e.to_string()),
        })
        .collect();
    let ok_rows: Vec<&AttackResult> =
        rows.iter().filter_map(|r| r.outcome.as_ref().ok()).collect();
    let successes = ok_rows.iter().filter(|r| r.success).count();
    let n_ok = ok_rows.len();
    let summary = AttackSummary {
        kind,
        count: rows.len(),
        successes,
        success_rate: if n_ok == 0 {
            0.0
        } else {
            successes as f64 / n_ok as f64
        },
        mean_l2: mean(ok_rows.iter().map(|r| r.l2_norm)),
        mean_max_abs: mean(ok_rows.iter().map(|r| r.max_abs)),
        flagged: rows.len() - n_ok,
    };
    Ok((rows, summary))
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let mut sum = 0.0;
    let mut n = 0usize;
    for v in values {
        sum += v;
        n += 1;
    }
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}
