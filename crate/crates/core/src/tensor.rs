//! Dense row-major tensors over `f64`.
//!
//! Everything in this crate that carries sample data (windows, perturbations,
//! gradients, noise) is one of these. Values are validated as finite at module
//! boundaries; internal kernels use the unchecked constructors.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    /// Build a tensor, rejecting shape/data mismatches and non-finite values.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::config(format!(
                "shape {:?} expects {} values, got {}",
                shape,
                expected,
                data.len()
            )));
        }
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::config(format!("zero-sized dimension in {shape:?}")));
        }
        if let Some(bad) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::config(format!(
                "non-finite value {} at flat index {bad}",
                data[bad]
            )));
        }
        Ok(Self { shape, data })
    }

    /// Internal constructor for values produced by our own kernels.
    pub(crate) fn from_raw(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self { shape, data }
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![0.0; n],
        }
    }

    pub fn zeros_like(other: &Tensor) -> Self {
        Self::zeros(other.shape.clone())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Flat index of `[i, j]` in a rank-2 tensor.
    #[inline]
    pub fn idx2(&self, i: usize, j: usize) -> usize {
        debug_assert_eq!(self.shape.len(), 2);
        i * self.shape[1] + j
    }

    /// Flat index of `[i, j, k]` in a rank-3 tensor.
    #[inline]
    pub fn idx3(&self, i: usize, j: usize, k: usize) -> usize {
        debug_assert_eq!(self.shape.len(), 3);
        (i * self.shape[1] + j) * self.shape[2] + k
    }

    /// Reinterpret the same data under a new shape.
    pub fn reshaped(&self, shape: Vec<usize>) -> Result<Tensor> {
        let expected: usize = shape.iter().product();
        if expected != self.data.len() {
            return Err(Error::config(format!(
                "cannot reshape {:?} ({} values) to {:?}",
                self.shape,
                self.data.len(),
                shape
            )));
        }
        Ok(Tensor {
            shape,
            data: self.data.clone(),
        })
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Element-wise sum with another tensor of identical shape.
    pub fn add(&self, other: &Tensor) -> Tensor {
        assert_eq!(self.shape, other.shape, "tensor shape mismatch in add");
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a + b)
            .collect();
        Tensor::from_raw(self.shape.clone(), data)
    }

    pub fn sub(&self, other: &Tensor) -> Tensor {
        assert_eq!(self.shape, other.shape, "tensor shape mismatch in sub");
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a - b)
            .collect();
        Tensor::from_raw(self.shape.clone(), data)
    }

    pub fn scale(&self, factor: f64) -> Tensor {
        let data = self.data.iter().map(|a| a * factor).collect();
        Tensor::from_raw(self.shape.clone(), data)
    }

    pub fn l2_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// Round every value through `f32`, so the tensor survives a 32-bit
    /// serialization round trip bit-exactly.
    pub fn quantize_f32(&mut self) {
        for v in &mut self.data {
            *v = *v as f32 as f64;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_rejects_shape_mismatch() {
        assert!(Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0]).is_err());
    }

    #[test]
    fn new_rejects_non_finite() {
        assert!(Tensor::new(vec![2], vec![1.0, f64::NAN]).is_err());
        assert!(Tensor::new(vec![2], vec![f64::INFINITY, 0.0]).is_err());
    }

    #[test]
    fn reshape_preserves_data() {
        let t = Tensor::new(vec![2, 3], (0..6).map(|i| i as f64).collect()).unwrap();
        let r = t.reshaped(vec![3, 2]).unwrap();
        assert_eq!(r.shape(), &[3, 2]);
        assert_eq!(r.data(), t.data());
        assert!(t.reshaped(vec![4, 2]).is_err());
    }

    #[test]
    fn norms() {
        let t = Tensor::new(vec![2], vec![3.0, -4.0]).unwrap();
        assert!((t.l2_norm() - 5.0).abs() < 1e-12);
        assert!((t.max_abs() - 4.0).abs() < 1e-12);
    }
}
