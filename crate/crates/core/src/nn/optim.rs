use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Optimizer state for a flat parameter list. Moment tensors are allocated on
/// the first step and must keep matching the parameter shapes afterwards.
#[derive(Debug, Clone)]
pub enum OptimizerState {
    Sgd {
        lr: f64,
    },
    Adam {
        lr: f64,
        beta1: f64,
        beta2: f64,
        eps: f64,
        step: u64,
        m: Vec<Tensor>,
        v: Vec<Tensor>,
    },
}

impl OptimizerState {
    pub fn sgd(lr: f64) -> Self {
        OptimizerState::Sgd { lr }
    }

    pub fn adam(lr: f64) -> Self {
        OptimizerState::Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    /// Apply one update. Deterministic given (state, params, grads).
    pub fn step(&mut self, params: &mut [Tensor], grads: &[Tensor]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::usage(format!(
                "{} parameter tensors but {} gradient tensors",
                params.len(),
                grads.len()
            )));
        }
        for (p, g) in params.iter().zip(grads) {
            if p.shape() != g.shape() {
                return Err(Error::usage(format!(
                    "gradient shape {:?} does not match parameter {:?}",
                    g.shape(),
                    p.shape()
                )));
            }
        }
        match self {
            OptimizerState::Sgd { lr } => {
                for (p, g) in params.iter_mut().zip(grads) {
                    for (pv, gv) in p.data_mut().iter_mut().zip(g.data()) {
                        *pv -= *lr * gv;
                    }
                }
            }
            OptimizerState::Adam {
                lr,
                beta1,
                beta2,
                eps,
                step,
                m,
                v,
            } => {
                if m.is_empty() {
                    *m = params.iter().map(Tensor::zeros_like).collect();
                    *v = params.iter().map(Tensor::zeros_like).collect();
                }
                if m.len() != params.len() || m[0].shape() != params[0].shape() {
                    return Err(Error::usage("optimizer moments do not match parameters"));
                }
                *step += 1;
                let t = *step as f64;
                let bc1 = 1.0 - beta1.powf(t);
                let bc2 = 1.0 - beta2.powf(t);
                for ((p, g), (mt, vt)) in params.iter_mut().zip(grads).zip(m.iter_mut().zip(v.iter_mut())) {
                    for ((pv, gv), (mv, vv)) in p
                        .data_mut()
                        .iter_mut()
                        .zip(g.data())
                        .zip(mt.data_mut().iter_mut().zip(vt.data_mut().iter_mut()))
                    {
                        *mv = *beta1 * *mv + (1.0 - *beta1) * gv;
                        *vv = *beta2 * *vv + (1.0 - *beta2) * gv * gv;
                        let m_hat = *mv / bc1;
                        let v_hat = *vv / bc2;
                        *pv -= *lr * m_hat / (v_hat.sqrt() + *eps);
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one(v: f64) -> Vec<Tensor> {
        vec![Tensor::new(vec![1], vec![v]).unwrap()]
    }

    #[test]
    fn sgd_definition() {
        let mut opt = OptimizerState::sgd(0.1);
        let mut p = one(1.0);
        opt.step(&mut p, &one(0.5)).unwrap();
        assert!((p[0].data()[0] - 0.95).abs() < 1e-15);
    }

    #[test]
    fn sgd_zero_grad_is_identity() {
        let mut opt = OptimizerState::sgd(0.1);
        let mut p = one(1.25);
        opt.step(&mut p, &one(0.0)).unwrap();
        assert_eq!(p[0].data()[0], 1.25);
    }

    #[test]
    fn adam_first_step_magnitude_is_lr() {
        // Bias-corrected first step: update = lr * g / (|g| + eps) ~ lr * sign(g)
        for &g in &[0.5f64, -3.0, 1e-3] {
            let mut opt = OptimizerState::adam(0.01);
            let mut p = one(0.0);
            opt.step(&mut p, &one(g)).unwrap();
            let update = p[0].data()[0];
            assert!(
                (update.abs() - 0.01).abs() < 1e-6,
                "grad {g} gave update {update}"
            );
            assert_eq!(update.signum(), -g.signum());
        }
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut opt = OptimizerState::sgd(0.1);
        let mut p = vec![Tensor::zeros(vec![2])];
        let g = vec![Tensor::zeros(vec![3])];
        assert!(opt.step(&mut p, &g).is_err());
    }
}
