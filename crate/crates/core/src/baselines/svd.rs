//! Compact SVD by one-sided Jacobi rotations.
//!
//! Small W x K matrices (one channel of one window) are all this crate ever
//! decomposes, where Jacobi is simple and accurate to near machine
//! precision: M = U diag(s) V^T to within ||M|| * 1e-8.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Thin factors: U is [W, r], s descending, V is [K, r], r = min(W, K).
#[derive(Debug, Clone)]
pub struct SvdFactors {
    pub u: Tensor,
    pub s: Vec<f64>,
    pub v: Tensor,
}

impl SvdFactors {
    pub fn rank(&self) -> usize {
        self.s.len()
    }

    /// Reconstruct keeping only the top `r` singular triples.
    pub fn reconstruct(&self, r: usize) -> Tensor {
        let (w, k) = (self.u.shape()[0], self.v.shape()[0]);
        let mut out = vec![0.0; w * k];
        for i in 0..r.min(self.s.len()) {
            let si = self.s[i];
            for row in 0..w {
                let ui = self.u.data()[self.u.idx2(row, i)] * si;
                for col in 0..k {
                    out[row * k + col] += ui * self.v.data()[self.v.idx2(col, i)];
                }
            }
        }
        Tensor::from_raw(vec![w, k], out)
    }
}

/// One-sided Jacobi SVD of a [W, K] matrix.
pub fn compact_svd(m: &Tensor) -> Result<SvdFactors> {
    if m.shape().len() != 2 {
        return Err(Error::config(format!(
            "compact_svd expects a matrix, got {:?}",
            m.shape()
        )));
    }
    if !m.all_finite() {
        return Err(Error::config("compact_svd on non-finite matrix"));
    }
    let (rows, cols) = (m.shape()[0], m.shape()[1]);
    if rows >= cols {
        svd_tall(m)
    } else {
        // Decompose the transpose and swap factors.
        let mut td = vec![0.0; rows * cols];
        for r in 0..rows {
            for c in 0..cols {
                td[c * rows + r] = m.data()[m.idx2(r, c)];
            }
        }
        let t = Tensor::from_raw(vec![cols, rows], td);
        let f = svd_tall(&t)?;
        Ok(SvdFactors {
            u: f.v,
            s: f.s,
            v: f.u,
        })
    }
}

/// Jacobi sweeps over column pairs of a tall matrix (rows >= cols).
fn svd_tall(m: &Tensor) -> Result<SvdFactors> {
    let (rows, cols) = (m.shape()[0], m.shape()[1]);
    // Column-major working copy of A, plus V accumulated from rotations.
    let mut a: Vec<Vec<f64>> = (0..cols)
        .map(|c| (0..rows).map(|r| m.data()[m.idx2(r, c)]).collect())
        .collect();
    let mut v: Vec<Vec<f64>> = (0..cols)
        .map(|c| {
            let mut col = vec![0.0; cols];
            col[c] = 1.0;
            col
        })
        .collect();

    let scale: f64 = a
        .iter()
        .flat_map(|c| c.iter())
        .fold(0.0f64, |acc, &x| acc.max(x.abs()));
    let tol = 1e-15 * scale.max(1e-300) * scale;
    for _sweep in 0..60 {
        let mut rotated = false;
        for p in 0..cols {
            for q in (p + 1)..cols {
                let mut app = 0.0;
                let mut aqq = 0.0;
                let mut apq = 0.0;
                for r in 0..rows {
                    app += a[p][r] * a[p][r];
                    aqq += a[q][r] * a[q][r];
                    apq += a[p][r] * a[q][r];
                }
                if apq.abs() <= tol || apq.abs() <= 1e-15 * (app * aqq).sqrt() {
                    continue;
                }
                rotated = true;
                let tau = (aqq - app) / (2.0 * apq);
                let t = tau.signum() / (tau.abs() + (1.0 + tau * tau).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for r in 0..rows {
                    let ap = a[p][r];
                    let aq = a[q][r];
                    a[p][r] = c * ap - s * aq;
                    a[q][r] = s * ap + c * aq;
                }
                for r in 0..cols {
                    let vp = v[p][r];
                    let vq = v[q][r];
                    v[p][r] = c * vp - s * vq;
                    v[q][r] = s * vp + c * vq;
                }
            }
        }
        if !rotated {
            break;
        }
    }

    // Column norms are the singular values; sort descending.
    let mut order: Vec<usize> = (0..cols).collect();
    let norms: Vec<f64> = a
        .iter()
        .map(|col| col.iter().map(|x| x * x).sum::<f64>().sqrt())
        .collect();
    order.sort_by(|&i, &j| norms[j].partial_cmp(&norms[i]).unwrap());

    let mut u = vec![0.0; rows * cols];
    let mut vt = vec![0.0; cols * cols];
    let mut s = Vec::with_capacity(cols);
    for (out_idx, &src) in order.iter().enumerate() {
        let sigma = norms[src];
        s.push(sigma);
        let inv = if sigma > 0.0 { 1.0 / sigma } else { 0.0 };
        for r in 0..rows {
            u[r * cols + out_idx] = a[src][r] * inv;
        }
        for r in 0..cols {
            vt[r * cols + out_idx] = v[src][r];
        }
    }
    Ok(SvdFactors {
        u: Tensor::from_raw(vec![rows, cols], u),
        s,
        v: Tensor::from_raw(vec![cols, cols], vt),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn random_matrix(rows: usize, cols: usize, seed: u64) -> Tensor {
        let mut r = rng::rng_for(seed, rng::Stream::GradCheck, 17);
        rng::gaussian_tensor(vec![rows, cols], &mut r)
    }

    #[test]
    fn diagonal_matrix_singular_values() {
        let mut m = Tensor::zeros(vec![3, 3]);
        for (i, v) in [3.0, 2.0, 1.0].into_iter().enumerate() {
            let idx = m.idx2(i, i);
            m.data_mut()[idx] = v;
        }
        let f = compact_svd(&m).unwrap();
        assert!((f.s[0] - 3.0).abs() < 1e-12);
        assert!((f.s[1] - 2.0).abs() < 1e-12);
        assert!((f.s[2] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rank_one_outer_product() {
        let u = [1.0, -2.0, 0.5, 3.0];
        let v = [2.0, 1.0, -1.0];
        let mut m = Tensor::zeros(vec![4, 3]);
        for r in 0..4 {
            for c in 0..3 {
                let idx = m.idx2(r, c);
                m.data_mut()[idx] = u[r] * v[c];
            }
        }
        let f = compact_svd(&m).unwrap();
        assert!(f.s[1] / f.s[0] < 1e-10, "s = {:?}", f.s);
    }

    #[test]
    fn random_matrix_reconstruction_and_orthonormality() {
        let m = random_matrix(5, 4, 0);
        let f = compact_svd(&m).unwrap();
        let rec = f.reconstruct(4);
        for (a, b) in rec.data().iter().zip(m.data()) {
            assert!((a - b).abs() < 1e-10, "{a} vs {b}");
        }
        // U^T U = I and V^T V = I within 1e-10.
        for i in 0..4 {
            for j in 0..4 {
                let mut uu = 0.0;
                for r in 0..5 {
                    uu += f.u.data()[f.u.idx2(r, i)] * f.u.data()[f.u.idx2(r, j)];
                }
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((uu - want).abs() < 1e-10, "UtU[{i}{j}] = {uu}");
                let mut vv = 0.0;
                for r in 0..4 {
                    vv += f.v.data()[f.v.idx2(r, i)] * f.v.data()[f.v.idx2(r, j)];
                }
                assert!((vv - want).abs() < 1e-10, "VtV[{i}{j}] = {vv}");
            }
        }
        // Singular values descending.
        assert!(f.s.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn wide_matrices_go_through_the_transpose() {
        let m = random_matrix(3, 6, 1);
        let f = compact_svd(&m).unwrap();
        assert_eq!(f.u.shape(), &[3, 3]);
        assert_eq!(f.v.shape(), &[6, 3]);
        let rec = f.reconstruct(3);
        for (a, b) in rec.data().iter().zip(m.data()) {
            assert!((a - b).abs() < 1e-10);
        }
    }
}
