//! Finite-difference gradient checking.
//!
//! The check drives the network through a random linear functional
//! `L(out) = sum(r * out)` with seeded `r`, compares the analytic gradients
//! from `backward` against central differences (h = 1e-5) over every
//! parameter and every input element, and reports the worst relative error.

use super::Network;
use crate::error::Result;
use crate::rng::{self, Stream};
use crate::tensor::Tensor;

const H: f64 = 1e-5;

/// Max relative error between analytic and numeric gradients.
pub fn grad_check(net: &Network, seed: u64) -> Result<f64> {
    check_inner(net, seed, None)
}

/// Self-test hook: scales one analytic parameter gradient by 2 before the
/// comparison, which a sound checker must flag with a large error.
pub fn grad_check_corrupted(net: &Network, seed: u64, tensor_idx: usize, elem: usize) -> Result<f64> {
    check_inner(net, seed, Some((tensor_idx, elem)))
}

fn check_inner(net: &Network, seed: u64, corrupt: Option<(usize, usize)>) -> Result<f64> {
    let mut rng = rng::rng_for(seed, Stream::GradCheck, 0);
    let input = rng::gaussian_tensor(net.input_shape().to_vec(), &mut rng);
    let out_shape = net.output_shape();
    let functional = rng::gaussian_tensor(out_shape, &mut rng);
    let time = net.needs_time().then_some(5.0);

    let (_, cache) = net.forward_with_time(&input, time)?;
    let (mut param_grads, input_grad) = net.backward(&cache, &functional)?;
    if let Some((ti, ei)) = corrupt {
        param_grads[ti].data_mut()[ei] *= 2.0;
    }

    let loss = |net: &Network, input: &Tensor| -> Result<f64> {
        let out = net.infer(input, time)?;
        Ok(out
            .data()
            .iter()
            .zip(functional.data())
            .map(|(o, r)| o * r)
            .sum())
    };

    let mut worst = 0.0f64;
    let mut probe = net.clone();
    // The corrupted-gradient hook refers to tensor indices of `net`; clone
    // preserves ordering so indices line up.
    for t_idx in 0..net.params().len() {
        for e_idx in 0..net.params()[t_idx].len() {
            let orig = probe.params()[t_idx].data()[e_idx];
            probe.params_mut()[t_idx].data_mut()[e_idx] = orig + H;
            let plus = loss(&probe, &input)?;
            probe.params_mut()[t_idx].data_mut()[e_idx] = orig - H;
            let minus = loss(&probe, &input)?;
            probe.params_mut()[t_idx].data_mut()[e_idx] = orig;
            let numeric = (plus - minus) / (2.0 * H);
            let analytic = param_grads[t_idx].data()[e_idx];
            worst = worst.max(rel_err(analytic, numeric));
        }
    }
    let mut x = input.clone();
    for i in 0..x.len() {
        let orig = x.data()[i];
        x.data_mut()[i] = orig + H;
        let plus = loss(net, &x)?;
        x.data_mut()[i] = orig - H;
        let minus = loss(net, &x)?;
        x.data_mut()[i] = orig;
        let numeric = (plus - minus) / (2.0 * H);
        worst = worst.max(rel_err(input_grad.data()[i], numeric));
    }
    Ok(worst)
}

fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / numeric.abs().max(1e-8)
}
