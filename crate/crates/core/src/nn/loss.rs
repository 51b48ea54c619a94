use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Numerically stable softmax over a logit slice.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|e| e / sum).collect()
}

/// Cross-entropy of a softmax over `logits` against a one-hot label.
///
/// Returns the loss and its gradient with respect to the logits, which is
/// `softmax(logits) - label`. Uses log-sum-exp for stability.
pub fn softmax_cross_entropy(logits: &Tensor, one_hot: &[f64]) -> Result<(f64, Tensor)> {
    if logits.shape().len() != 1 || logits.len() != one_hot.len() {
        return Err(Error::config(format!(
            "logits shape {:?} does not match label length {}",
            logits.shape(),
            one_hot.len()
        )));
    }
    let z = logits.data();
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let log_sum_exp = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    let picked: f64 = z.iter().zip(one_hot).map(|(zv, yv)| zv * yv).sum();
    let loss = log_sum_exp - picked;
    let probs = softmax(z);
    let grad: Vec<f64> = probs.iter().zip(one_hot).map(|(p, y)| p - y).collect();
    Ok((loss, Tensor::from_raw(vec![z.len()], grad)))
}
