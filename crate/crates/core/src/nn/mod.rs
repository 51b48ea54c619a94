//! Minimal differentiable-network engine.
//!
//! A fixed layer vocabulary (dense, 1-D convolution along time, relu, global
//! average pooling over time, additive time embedding, reshape) with exact
//! analytic gradients for both parameters and inputs. Inputs gradients are
//! what the attack suite consumes; parameter gradients drive training.
//!
//! Networks are immutable during inference: `forward`/`backward` are pure
//! given `(net, input)` and safe to call from many threads. Training mutates
//! parameters through a single writer.

mod checkpoint;
mod gradcheck;
mod loss;
mod optim;

pub use checkpoint::{load_network, save_network, CheckpointManifest};
pub use gradcheck::{grad_check, grad_check_corrupted};
pub use loss::{softmax, softmax_cross_entropy};
pub use optim::OptimizerState;

use crate::error::{Error, Result};
use crate::rng::{self, Stream};
use crate::tensor::Tensor;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::sync::atomic::{AtomicU64, Ordering};

/// Layer hyperparameters. Kernel widths must be odd so "same" padding keeps
/// the time axis length; channel/unit counts must be positive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum LayerSpec {
    Dense { units: usize },
    Conv1dTime { kernel: usize, channels: usize },
    Relu,
    GlobalAveragePoolTime,
    TimeEmbeddingAdd { embed_dim: usize },
    Reshape { shape: Vec<usize> },
}

impl LayerSpec {
    fn validate(&self) -> Result<()> {
        match self {
            LayerSpec::Dense { units } if *units == 0 => {
                Err(Error::config("dense layer needs units >= 1"))
            }
            LayerSpec::Conv1dTime { kernel, channels } => {
                if *kernel % 2 == 0 || *kernel == 0 {
                    Err(Error::config(format!("conv kernel must be odd >= 1, got {kernel}")))
                } else if *channels == 0 {
                    Err(Error::config("conv layer needs channels >= 1"))
                } else {
                    Ok(())
                }
            }
            LayerSpec::TimeEmbeddingAdd { embed_dim } => {
                if *embed_dim < 2 || *embed_dim % 2 != 0 {
                    Err(Error::config(format!(
                        "time embedding dim must be even >= 2, got {embed_dim}"
                    )))
                } else {
                    Ok(())
                }
            }
            LayerSpec::Reshape { shape } => {
                if shape.is_empty() || shape.iter().any(|&d| d == 0) {
                    Err(Error::config(format!("invalid reshape target {shape:?}")))
                } else {
                    Ok(())
                }
            }
            _ => Ok(()),
        }
    }

    /// Output shape for a given input shape, or a configuration error when
    /// the shapes do not compose.
    fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        match self {
            LayerSpec::Dense { units } => {
                if input.len() != 1 {
                    return Err(Error::config(format!(
                        "dense expects a rank-1 input, got {input:?}"
                    )));
                }
                Ok(vec![*units])
            }
            LayerSpec::Conv1dTime { channels, .. } => {
                if input.len() != 2 {
                    return Err(Error::config(format!(
                        "conv1d-time expects [time, channels], got {input:?}"
                    )));
                }
                Ok(vec![input[0], *channels])
            }
            LayerSpec::Relu => Ok(input.to_vec()),
            LayerSpec::GlobalAveragePoolTime => {
                if input.len() != 2 {
                    return Err(Error::config(format!(
                        "global-average-pool-time expects [time, channels], got {input:?}"
                    )));
                }
                Ok(vec![input[1]])
            }
            LayerSpec::TimeEmbeddingAdd { .. } => {
                if input.len() != 2 {
                    return Err(Error::config(format!(
                        "time-embedding-add expects [time, channels], got {input:?}"
                    )));
                }
                Ok(input.to_vec())
            }
            LayerSpec::Reshape { shape } => {
                let have: usize = input.iter().product();
                let want: usize = shape.iter().product();
                if have != want {
                    return Err(Error::config(format!(
                        "reshape {input:?} -> {shape:?} changes element count"
                    )));
                }
                Ok(shape.clone())
            }
        }
    }

    /// Shapes of this layer's parameter tensors given its input shape.
    fn param_shapes(&self, input: &[usize]) -> Vec<Vec<usize>> {
        match self {
            LayerSpec::Dense { units } => vec![vec![input[0], *units], vec![*units]],
            LayerSpec::Conv1dTime { kernel, channels } => {
                vec![vec![*kernel, input[1], *channels], vec![*channels]]
            }
            LayerSpec::TimeEmbeddingAdd { embed_dim } => {
                vec![vec![*embed_dim, input[1]], vec![input[1]]]
            }
            _ => vec![],
        }
    }

    fn fan_in(&self, input: &[usize]) -> usize {
        match self {
            LayerSpec::Dense { .. } => input[0],
            LayerSpec::Conv1dTime { kernel, .. } => kernel * input[1],
            LayerSpec::TimeEmbeddingAdd { embed_dim } => *embed_dim,
            _ => 0,
        }
    }
}

static NEXT_NET_ID: AtomicU64 = AtomicU64::new(1);

/// A feed-forward network over the fixed layer vocabulary.
#[derive(Debug)]
pub struct Network {
    layers: Vec<LayerSpec>,
    input_shape: Vec<usize>,
    /// Flat list of parameter tensors; `layer_params[i]` gives the range of
    /// this list owned by layer `i`.
    params: Vec<Tensor>,
    layer_params: Vec<(usize, usize)>,
    init_seed: u64,
    id: u64,
}

impl Clone for Network {
    fn clone(&self) -> Self {
        Network {
            layers: self.layers.clone(),
            input_shape: self.input_shape.clone(),
            params: self.params.clone(),
            layer_params: self.layer_params.clone(),
            init_seed: self.init_seed,
            // Fresh identity: caches from the original are not valid here.
            id: NEXT_NET_ID.fetch_add(1, Ordering::Relaxed),
        }
    }
}

impl Network {
    /// Build a network, validating that consecutive layer shapes compose,
    /// and initialize parameters with seeded uniform Kaiming fan-in scaling
    /// (biases start at zero).
    pub fn new(input_shape: Vec<usize>, layers: Vec<LayerSpec>, init_seed: u64) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::config("network needs at least one layer"));
        }
        let mut params = Vec::new();
        let mut layer_params = Vec::new();
        let mut shape = input_shape.clone();
        for (li, layer) in layers.iter().enumerate() {
            layer.validate()?;
            let pshapes = layer.param_shapes(&shape);
            let start = params.len();
            if !pshapes.is_empty() {
                let mut rng = rng::rng_for(init_seed, Stream::Init, li as u64);
                let bound = (6.0 / layer.fan_in(&shape) as f64).sqrt();
                // weight tensor first, then zero bias
                let wshape = pshapes[0].clone();
                let n: usize = wshape.iter().product();
                let data: Vec<f64> = (0..n).map(|_| rng.random_range(-bound..=bound)).collect();
                params.push(Tensor::from_raw(wshape, data));
                params.push(Tensor::zeros(pshapes[1].clone()));
            }
            layer_params.push((start, params.len() - start));
            shape = layer.output_shape(&shape)?;
        }
        Ok(Network {
            layers,
            input_shape,
            params,
            layer_params,
            init_seed,
            id: NEXT_NET_ID.fetch_add(1, Ordering::Relaxed),
        })
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn output_shape(&self) -> Vec<usize> {
        let mut shape = self.input_shape.clone();
        for layer in &self.layers {
            shape = layer.output_shape(&shape).expect("validated at construction");
        }
        shape
    }

    pub fn init_seed(&self) -> u64 {
        self.init_seed
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(|p| p.len()).sum()
    }

    /// Replace all parameters; shapes must match.
    pub fn set_params(&mut self, params: Vec<Tensor>) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(Error::usage(format!(
                "expected {} parameter tensors, got {}",
                self.params.len(),
                params.len()
            )));
        }
        for (have, want) in params.iter().zip(&self.params) {
            if have.shape() != want.shape() {
                return Err(Error::usage(format!(
                    "parameter shape mismatch: {:?} vs {:?}",
                    have.shape(),
                    want.shape()
                )));
            }
            if !have.all_finite() {
                return Err(Error::usage("non-finite parameter value"));
            }
        }
        self.params = params;
        Ok(())
    }

    /// Zero the parameters of the last parameterized layer. Used to start
    /// noise estimators at the zero predictor and for degenerate-output tests.
    pub fn zero_final_params(&mut self) {
        if let Some(&(start, count)) = self
            .layer_params
            .iter()
            .rev()
            .find(|(_, count)| *count > 0)
        {
            for p in &mut self.params[start..start + count] {
                p.data_mut().fill(0.0);
            }
        }
    }

    /// True if any layer consumes a conditioning time value.
    pub fn needs_time(&self) -> bool {
        self.layers
            .iter()
            .any(|l| matches!(l, LayerSpec::TimeEmbeddingAdd { .. }))
    }

    pub fn forward(&self, input: &Tensor) -> Result<(Tensor, ForwardCache)> {
        self.forward_with_time(input, None)
    }

    /// Run the network, keeping the per-layer activation record needed by
    /// `backward`. `time` conditions any time-embedding-add layers.
    pub fn forward_with_time(
        &self,
        input: &Tensor,
        time: Option<f64>,
    ) -> Result<(Tensor, ForwardCache)> {
        self.run_forward(input, time, true)
            .map(|(out, cache)| (out, cache.expect("cache requested")))
    }

    /// Inference without an activation record (cheaper; cannot be used for
    /// backward).
    pub fn infer(&self, input: &Tensor, time: Option<f64>) -> Result<Tensor> {
        self.run_forward(input, time, false).map(|(out, _)| out)
    }

    fn run_forward(
        &self,
        input: &Tensor,
        time: Option<f64>,
        keep_cache: bool,
    ) -> Result<(Tensor, Option<ForwardCache>)> {
        if input.shape() != self.input_shape.as_slice() {
            return Err(Error::config(format!(
                "input shape {:?} does not match network input {:?}",
                input.shape(),
                self.input_shape
            )));
        }
        if self.needs_time() && time.is_none() {
            return Err(Error::usage(
                "network contains time-embedding-add but no time value was given",
            ));
        }
        let mut inputs = Vec::new();
        let mut x = input.clone();
        for (li, layer) in self.layers.iter().enumerate() {
            if keep_cache {
                inputs.push(x.clone());
            }
            x = self.layer_forward(li, layer, &x, time);
        }
        if !x.all_finite() {
            return Err(Error::usage("non-finite network output"));
        }
        let cache = keep_cache.then(|| ForwardCache {
            net_id: self.id,
            time,
            inputs,
        });
        Ok((x, cache))
    }

    fn layer_forward(&self, li: usize, layer: &LayerSpec, x: &Tensor, time: Option<f64>) -> Tensor {
        match layer {
            LayerSpec::Dense { units } => {
                let (w, b) = self.layer_wb(li);
                let n_in = x.len();
                let mut out = b.data().to_vec();
                let wd = w.data();
                for i in 0..n_in {
                    let xi = x.data()[i];
                    let row = &wd[i * units..(i + 1) * units];
                    for (o, wv) in out.iter_mut().zip(row) {
                        *o += xi * wv;
                    }
                }
                Tensor::from_raw(vec![*units], out)
            }
            LayerSpec::Conv1dTime { kernel, channels } => {
                let (w, b) = self.layer_wb(li);
                let (n_t, c_in) = (x.shape()[0], x.shape()[1]);
                let c_out = *channels;
                let pad = (kernel - 1) / 2;
                let mut out = vec![0.0; n_t * c_out];
                for (t, row) in out.chunks_exact_mut(c_out).enumerate() {
                    row.copy_from_slice(b.data());
                    for dk in 0..*kernel {
                        let ti = t as isize + dk as isize - pad as isize;
                        if ti < 0 || ti >= n_t as isize {
                            continue;
                        }
                        let xrow = &x.data()[ti as usize * c_in..(ti as usize + 1) * c_in];
                        let wslab = &w.data()[dk * c_in * c_out..(dk + 1) * c_in * c_out];
                        for (ci, &xv) in xrow.iter().enumerate() {
                            if xv == 0.0 {
                                continue;
                            }
                            let wrow = &wslab[ci * c_out..(ci + 1) * c_out];
                            for (o, wv) in row.iter_mut().zip(wrow) {
                                *o += xv * wv;
                            }
                        }
                    }
                }
                Tensor::from_raw(vec![n_t, c_out], out)
            }
            LayerSpec::Relu => {
                let data = x.data().iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect();
                Tensor::from_raw(x.shape().to_vec(), data)
            }
            LayerSpec::GlobalAveragePoolTime => {
                let (n_t, c) = (x.shape()[0], x.shape()[1]);
                let mut out = vec![0.0; c];
                for row in x.data().chunks_exact(c) {
                    for (o, &v) in out.iter_mut().zip(row) {
                        *o += v;
                    }
                }
                let inv = 1.0 / n_t as f64;
                out.iter_mut().for_each(|o| *o *= inv);
                Tensor::from_raw(vec![c], out)
            }
            LayerSpec::TimeEmbeddingAdd { embed_dim } => {
                let (w, b) = self.layer_wb(li);
                let (n_t, c) = (x.shape()[0], x.shape()[1]);
                let emb = sinusoidal_embedding(time.expect("checked in run_forward"), *embed_dim);
                // per-channel offset = W^T e + b, broadcast over time
                let mut offs = b.data().to_vec();
                for (e, &ev) in emb.iter().enumerate() {
                    let wrow = &w.data()[e * c..(e + 1) * c];
                    for (o, wv) in offs.iter_mut().zip(wrow) {
                        *o += ev * wv;
                    }
                }
                let mut out = x.data().to_vec();
                for row in out.chunks_exact_mut(c) {
                    for (o, &ov) in row.iter_mut().zip(&offs) {
                        *o += ov;
                    }
                }
                Tensor::from_raw(vec![n_t, c], out)
            }
            LayerSpec::Reshape { shape } => x.reshaped(shape.clone()).expect("validated"),
        }
    }

    /// Backpropagate `output_grad` through the recorded activations, returning
    /// per-parameter gradients (flat, aligned with `params()`) and the
    /// gradient with respect to the network input.
    pub fn backward(&self, cache: &ForwardCache, output_grad: &Tensor) -> Result<(Vec<Tensor>, Tensor)> {
        if cache.net_id != self.id {
            return Err(Error::usage(
                "activation cache does not belong to this network",
            ));
        }
        if cache.inputs.len() != self.layers.len() {
            return Err(Error::usage("stale activation cache"));
        }
        let mut param_grads: Vec<Tensor> = self.params.iter().map(Tensor::zeros_like).collect();
        let mut g = output_grad.clone();
        for (li, layer) in self.layers.iter().enumerate().rev() {
            let x = &cache.inputs[li];
            g = self.layer_backward(li, layer, x, &g, cache.time, &mut param_grads);
        }
        if !g.all_finite() {
            return Err(Error::usage("non-finite input gradient"));
        }
        Ok((param_grads, g))
    }

    fn layer_backward(
        &self,
        li: usize,
        layer: &LayerSpec,
        x: &Tensor,
        g: &Tensor,
        time: Option<f64>,
        param_grads: &mut [Tensor],
    ) -> Tensor {
        let (pstart, _) = self.layer_params[li];
        match layer {
            LayerSpec::Dense { units } => {
                let (w, _) = self.layer_wb(li);
                let n_in = x.len();
                {
                    let dw = param_grads[pstart].data_mut();
                    for i in 0..n_in {
                        let xi = x.data()[i];
                        let drow = &mut dw[i * units..(i + 1) * units];
                        for (d, gv) in drow.iter_mut().zip(g.data()) {
                            *d += xi * gv;
                        }
                    }
                }
                {
                    let db = param_grads[pstart + 1].data_mut();
                    for (d, gv) in db.iter_mut().zip(g.data()) {
                        *d += gv;
                    }
                }
                let mut dx = vec![0.0; n_in];
                let wd = w.data();
                for (i, d) in dx.iter_mut().enumerate() {
                    let row = &wd[i * units..(i + 1) * units];
                    *d = row.iter().zip(g.data()).map(|(wv, gv)| wv * gv).sum();
                }
                Tensor::from_raw(vec![n_in], dx)
            }
            LayerSpec::Conv1dTime { kernel, channels } => {
                let (w, _) = self.layer_wb(li);
                let (n_t, c_in) = (x.shape()[0], x.shape()[1]);
                let c_out = *channels;
                let pad = (kernel - 1) / 2;
                {
                    let db = param_grads[pstart + 1].data_mut();
                    for grow in g.data().chunks_exact(c_out) {
                        for (d, gv) in db.iter_mut().zip(grow) {
                            *d += gv;
                        }
                    }
                }
                {
                    let dw = param_grads[pstart].data_mut();
                    for (t, grow) in g.data().chunks_exact(c_out).enumerate() {
                        for dk in 0..*kernel {
                            let ti = t as isize + dk as isize - pad as isize;
                            if ti < 0 || ti >= n_t as isize {
                                continue;
                            }
                            let xrow = &x.data()[ti as usize * c_in..(ti as usize + 1) * c_in];
                            let dslab = &mut dw[dk * c_in * c_out..(dk + 1) * c_in * c_out];
                            for (ci, &xv) in xrow.iter().enumerate() {
                                if xv == 0.0 {
                                    continue;
                                }
                                let drow = &mut dslab[ci * c_out..(ci + 1) * c_out];
                                for (d, gv) in drow.iter_mut().zip(grow) {
                                    *d += xv * gv;
                                }
                            }
                        }
                    }
                }
                let mut dx = vec![0.0; n_t * c_in];
                let wd = w.data();
                for (t, grow) in g.data().chunks_exact(c_out).enumerate() {
                    for dk in 0..*kernel {
                        let ti = t as isize + dk as isize - pad as isize;
                        if ti < 0 || ti >= n_t as isize {
                            continue;
                        }
                        let dxrow = &mut dx[ti as usize * c_in..(ti as usize + 1) * c_in];
                        let wslab = &wd[dk * c_in * c_out..(dk + 1) * c_in * c_out];
                        for (ci, d) in dxrow.iter_mut().enumerate() {
                            let wrow = &wslab[ci * c_out..(ci + 1) * c_out];
                            *d += wrow.iter().zip(grow).map(|(wv, gv)| wv * gv).sum::<f64>();
                        }
                    }
                }
                Tensor::from_raw(vec![n_t, c_in], dx)
            }
            LayerSpec::Relu => {
                let data = x
                    .data()
                    .iter()
                    .zip(g.data())
                    .map(|(&xv, &gv)| if xv > 0.0 { gv } else { 0.0 })
                    .collect();
                Tensor::from_raw(x.shape().to_vec(), data)
            }
            LayerSpec::GlobalAveragePoolTime => {
                let (n_t, c) = (x.shape()[0], x.shape()[1]);
                let inv = 1.0 / n_t as f64;
                let mut dx = vec![0.0; n_t * c];
                for row in dx.chunks_exact_mut(c) {
                    for (d, gv) in row.iter_mut().zip(g.data()) {
                        *d = gv * inv;
                    }
                }
                Tensor::from_raw(vec![n_t, c], dx)
            }
            LayerSpec::TimeEmbeddingAdd { embed_dim } => {
                let c = x.shape()[1];
                let emb = sinusoidal_embedding(time.expect("forward succeeded"), *embed_dim);
                let mut gsum = vec![0.0; c];
                for grow in g.data().chunks_exact(c) {
                    for (s, gv) in gsum.iter_mut().zip(grow) {
                        *s += gv;
                    }
                }
                {
                    let dw = param_grads[pstart].data_mut();
                    for (e, &ev) in emb.iter().enumerate() {
                        let drow = &mut dw[e * c..(e + 1) * c];
                        for (d, sv) in drow.iter_mut().zip(&gsum) {
                            *d += ev * sv;
                        }
                    }
                }
                {
                    let db = param_grads[pstart + 1].data_mut();
                    for (d, sv) in db.iter_mut().zip(&gsum) {
                        *d += sv;
                    }
                }
                g.clone()
            }
            LayerSpec::Reshape { .. } => g.reshaped(x.shape().to_vec()).expect("validated"),
        }
    }

    fn layer_wb(&self, li: usize) -> (&Tensor, &Tensor) {
        let (start, count) = self.layer_params[li];
        debug_assert_eq!(count, 2);
        (&self.params[start], &self.params[start + 1])
    }
}

/// Activation record produced by `forward`, consumed by `backward`.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    net_id: u64,
    time: Option<f64>,
    inputs: Vec<Tensor>,
}

/// Standard sinusoidal position embedding of a (possibly fractional) step.
pub fn sinusoidal_embedding(t: f64, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let mut emb = vec![0.0; dim];
    for i in 0..half {
        let freq = (10_000.0f64).powf(-(i as f64) / half as f64);
        emb[2 * i] = (t * freq).sin();
        emb[2 * i + 1] = (t * freq).cos();
    }
    emb
}
