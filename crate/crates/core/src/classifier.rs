//! Small convolutional event classifier over PMU windows.
//!
//! The window's [K x 4] slab at each time step is flattened into K*4 input
//! channels for 1-D convolutions along time, pooled globally, and mapped to
//! four class logits. The classifier supplies predictions and exact input
//! gradients to the attack suite.

use crate::data::{Dataset, EventClass, PmuWindow, SplitKind, NUM_CHANNELS, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::nn::{softmax, softmax_cross_entropy, ForwardCache, LayerSpec, Network, OptimizerState};
use crate::rng::{self, Stream};
use crate::tensor::Tensor;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClassifierConfig {
    /// Channel widths of the conv stack, one entry per conv/relu block.
    pub conv_channels: Vec<usize>,
    pub kernel: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Std of Gaussian input augmentation during training (0 disables).
    pub noise_augment_std: f64,
    /// Cross-entropy target smoothing in [0, 1) (0 disables).
    pub label_smoothing: f64,
    pub seed: u64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig {
            conv_channels: vec![32, 64, 64],
            kernel: 5,
            epochs: 40,
            batch_size: 32,
            learning_rate: 1e-3,
            noise_augment_std: 0.0,
            label_smoothing: 0.0,
            seed: 1,
        }
    }
}

/// Multi-scale conv stack: between stages the time axis is folded in half
/// into channels (a stride-2 space-to-depth), doubling the receptive field
/// per stage so slow oscillations fit inside it. Ends with global average
/// pooling over time and a dense head.
pub fn build_classifier(window_len: usize, num_pmus: usize, cfg: &ClassifierConfig) -> Result<Network> {
    if cfg.conv_channels.is_empty() {
        return Err(Error::config("classifier needs at least one conv block"));
    }
    let mut layers = vec![LayerSpec::Reshape {
        shape: vec![window_len, num_pmus * NUM_CHANNELS],
    }];
    let mut t = window_len;
    let mut ch = num_pmus * NUM_CHANNELS;
    for (i, &channels) in cfg.conv_channels.iter().enumerate() {
        if i > 0 && t % 2 == 0 && t >= 8 {
            t /= 2;
            ch *= 2;
            layers.push(LayerSpec::Reshape { shape: vec![t, ch] });
        }
        layers.push(LayerSpec::Conv1dTime {
            kernel: cfg.kernel,
            channels,
        });
        layers.push(LayerSpec::Relu);
        ch = channels;
    }
    layers.push(LayerSpec::GlobalAveragePoolTime);
    layers.push(LayerSpec::Dense { units: NUM_CLASSES });
    Network::new(vec![window_len, num_pmus, NUM_CHANNELS], layers, cfg.seed)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_f1: f64,
}

/// Train on the normalized training split, tracking validation macro-F1 per
/// epoch and returning the parameters of the best validation epoch.
/// Deterministic given the config seed.
pub fn train_classifier(ds: &Dataset, cfg: &ClassifierConfig) -> Result<(Network, Vec<EpochStats>)> {
    if !ds.normalized {
        return Err(Error::usage("classifier training expects a normalized dataset"));
    }
    let train = ds.split_samples(SplitKind::Train)?;
    let val = ds.split_samples(SplitKind::Val)?;
    if train.is_empty() {
        return Err(Error::usage("empty training split"));
    }
    let (w, k) = train[0].0.dims();
    let mut net = build_classifier(w, k, cfg)?;
    let mut opt = OptimizerState::adam(cfg.learning_rate);
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, Vec<Tensor>)> = None;

    let n = train.len();
    for epoch in 0..cfg.epochs {
        let mut shuffle_rng = rng::rng_for(cfg.seed, Stream::TrainShuffle, epoch as u64);
        let order = rng::shuffled_indices(n, &mut shuffle_rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size.max(1)) {
            // Per-sample gradients in deterministic order, then a sequential
            // reduction so the result is independent of scheduling.
            let results: Vec<Result<(Vec<Tensor>, f64)>> = batch
                .par_iter()
                .map(|&idx| {
                    let (window, label) = train[idx];
                    let input = augmented_input(
                        window,
                        cfg.noise_augment_std,
                        cfg.seed,
                        (epoch * n + idx) as u64,
                    );
                    let (logits, cache) = net.forward(&input)?;
                    let target = smoothed_target(*label, cfg.label_smoothing);
                    let (loss, logit_grad) = softmax_cross_entropy(&logits, &target)?;
                    let (param_grads, _) = net.backward(&cache, &logit_grad)?;
                    Ok((param_grads, loss))
                })
                .collect();
            let mut sum_grads: Vec<Tensor> = net.params().iter().map(Tensor::zeros_like).collect();
            let mut batch_loss = 0.0;
            for r in results {
                // Shapes are validated up front, so any error mid-training is
                // a numerical blow-up.
                let (grads, loss) = r.map_err(|e| Error::Training {
                    epoch,
                    detail: e.to_string(),
                })?;
                for (acc, g) in sum_grads.iter_mut().zip(&grads) {
                    for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                        *a += b;
                    }
                }
                batch_loss += loss;
            }
            if !batch_loss.is_finite() {
                return Err(Error::Training {
                    epoch,
                    detail: "loss diverged to NaN/inf".to_string(),
                });
            }
            let scale = 1.0 / batch.len() as f64;
            for g in &mut sum_grads {
                for v in g.data_mut() {
                    *v *= scale;
                }
            }
            let mut params: Vec<Tensor> = net.params().to_vec();
            opt.step(&mut params, &sum_grads)
                .and_then(|_| net.set_params(params))
                .map_err(|e| Error::Training {
                    epoch,
                    detail: e.to_string(),
                })?;
            epoch_loss += batch_loss;
        }
        let train_loss = epoch_loss / n as f64;

        let val_pairs: Vec<Result<(usize, usize)>> = val
            .par_iter()
            .map(|(window, label)| {
                let probs = predict(&net, window)?;
                Ok((argmax(&probs), label.index()))
            })
            .collect();
        let mut preds = Vec::with_capacity(val.len());
        let mut labels = Vec::with_capacity(val.len());
        for r in val_pairs {
            let (p, l) = r?;
            preds.push(p);
            labels.push(l);
        }
        let val_f1 = macro_f1(&preds, &labels)?;
        history.push(EpochStats {
            epoch,
            train_loss,
            val_f1,
        });
        if best.as_ref().map_or(true, |(f, _)| val_f1 > *f) {
            best = Some((val_f1, net.params().to_vec()));
        }
    }
    if let Some((_, params)) = best {
        net.set_params(params)?;
    }
    Ok((net, history))
}

fn smoothed_target(label: EventClass, smoothing: f64) -> [f64; NUM_CLASSES] {
    let mut target = [smoothing / NUM_CLASSES as f64; NUM_CLASSES];
    target[label.index()] += 1.0 - smoothing;
    target
}

fn augmented_input(window: &PmuWindow, std: f64, seed: u64, stream_idx: u64) -> Tensor {
    if std <= 0.0 {
        return window.values().clone();
    }
    let mut rng = rng::rng_for(seed, Stream::Augment, stream_idx);
    let noise = rng::gaussian_tensor(window.values().shape().to_vec(), &mut rng);
    window.values().add(&noise.scale(std))
}

/// Class-probability vector for one window.
pub fn predict(net: &Network, window: &PmuWindow) -> Result<[f64; NUM_CLASSES]> {
    let logits = net.infer(window.values(), None)?;
    if logits.len() != NUM_CLASSES {
        return Err(Error::config(format!(
            "classifier head produced {} logits",
            logits.len()
        )));
    }
    let probs = softmax(logits.data());
    let mut out = [0.0; NUM_CLASSES];
    out.copy_from_slice(&probs);
    Ok(out)
}

/// Raw logits plus the activation record, for attack internals.
pub fn logits_with_cache(net: &Network, input: &Tensor) -> Result<(Tensor, ForwardCache)> {
    net.forward(input)
}

pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Which scalar loss the input gradient is taken through.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossMode {
    /// Softmax cross-entropy against the true label.
    CrossEntropy,
    /// z_true - max_{j != true} z_j, the logit margin used by DeepFool/C&W.
    LogitMargin,
}

/// Gradient of the chosen loss with respect to the window values.
///
/// The cross-entropy path is literally forward + softmax_cross_entropy +
/// backward; there is no separate gradient formula to drift out of sync.
pub fn input_gradient(
    net: &Network,
    window: &PmuWindow,
    label: EventClass,
    mode: LossMode,
) -> Result<Tensor> {
    let (logits, cache) = net.forward(window.values())?;
    let logit_grad = match mode {
        LossMode::CrossEntropy => softmax_cross_entropy(&logits, &label.one_hot())?.1,
        LossMode::LogitMargin => {
            let z = logits.data();
            let t = label.index();
            let mut runner_up = if t == 0 { 1 } else { 0 };
            for j in 0..z.len() {
                if j != t && z[j] > z[runner_up] {
                    runner_up = j;
                }
            }
            let mut g = vec![0.0; z.len()];
            g[t] = 1.0;
            g[runner_up] = -1.0;
            Tensor::new(vec![z.len()], g)?
        }
    };
    let (_, input_grad) = net.backward(&cache, &logit_grad)?;
    Ok(input_grad)
}

/// Per-class F1 detail; `absent` marks classes that appear in neither the
/// predictions nor the labels (excluded from the macro mean, reported as 0).
#[derive(Debug, Clone)]
pub struct F1Report {
    pub per_class: [f64; NUM_CLASSES],
    pub absent: [bool; NUM_CLASSES],
    pub macro_f1: f64,
}

pub fn macro_f1_report(preds: &[usize], labels: &[usize]) -> Result<F1Report> {
    if preds.is_empty() {
        return Err(Error::usage("macro_f1 on empty input"));
    }
    if preds.len() != labels.len() {
        return Err(Error::usage(format!(
            "{} predictions vs {} labels",
            preds.len(),
            labels.len()
        )));
    }
    let mut tp = [0usize; NUM_CLASSES];
    let mut fp = [0usize; NUM_CLASSES];
    let mut fneg = [0usize; NUM_CLASSES];
    for (&p, &l) in preds.iter().zip(labels) {
        if p >= NUM_CLASSES || l >= NUM_CLASSES {
            return Err(Error::usage(format!(
                "class index out of range: pred {p}, label {l}"
            )));
        }
        if p == l {
            tp[p] += 1;
        } else {
            fp[p] += 1;
            fneg[l] += 1;
        }
    }
    let mut per_class = [0.0; NUM_CLASSES];
    let mut absent = [false; NUM_CLASSES];
    let mut sum = 0.0;
    let mut present = 0usize;
    for c in 0..NUM_CLASSES {
        let denom = 2 * tp[c] + fp[c] + fneg[c];
        if denom == 0 {
            absent[c] = true;
            continue;
        }
        per_class[c] = 2.0 * tp[c] as f64 / denom as f64;
        sum += per_class[c];
        present += 1;
    }
    if present == 0 {
        return Err(Error::usage("no class present in predictions or labels"));
    }
    Ok(F1Report {
        per_class,
        absent,
        macro_f1: sum / present as f64,
    })
}

/// Unweighted mean of per-class F1 over the classes present in predictions
/// or labels.
pub fn macro_f1(preds: &[usize], labels: &[usize]) -> Result<f64> {
    macro_f1_report(preds, labels).map(|r| r.macro_f1)
}

/// Batch predictions over windows, order-stable under parallel scheduling.
pub fn predict_batch(net: &Network, windows: &[&PmuWindow]) -> Result<Vec<usize>> {
    windows
        .par_iter()
        .map(|w| predict(net, w).map(|p| argmax(&p)))
        .collect()
}

/// `history.csv` with epoch, train-loss, val-F1 columns.
pub fn write_history_csv(history: &[EpochStats], path: &Path) -> Result<()> {
    let mut out = String::from("epoch,train_loss,val_f1\n");
    for h in history {
        out.push_str(&format!("{},{},{}\n", h.epoch, h.train_loss, h.val_f1));
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}
