//! Adam with a step learning-rate schedule.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub step: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub first_moment: Vec<Tensor>,
    pub second_moment: Vec<Tensor>,
}

impl AdamState {
    /// Fresh state with zero moments shaped like `params`.
    pub fn new(lr: f64, params: &[&Tensor]) -> Self {
        Self {
            step: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            first_moment: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            second_moment: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
        }
    }

    /// One bias-corrected Adam update. A non-finite gradient rejects the
    /// whole step and leaves both parameters and state untouched.
    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[Tensor]) -> Result<()> {
        if params.len() != grads.len() || params.len() != self.first_moment.len() {
            return Err(Error::dim(format!(
                "adam got {} params, {} grads, {} moment slots",
                params.len(),
                grads.len(),
                self.first_moment.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != g.shape() || p.shape() != self.first_moment[i].shape() {
                return Err(Error::dim(format!(
                    "parameter {i}: shape {:?}, gradient {:?}",
                    p.shape(),
                    g.shape()
                )));
            }
            if let Some(pos) = g.data().iter().position(|v| !v.is_finite()) {
                return Err(Error::Numerical(format!(
                    "non-finite gradient in parameter {i} at flat index {pos}"
                )));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let m = self.first_moment[i].data_mut();
            let v = self.second_moment[i].data_mut();
            for (((pv, gv), mv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mv = self.beta1 * *mv + (1.0 - self.beta1) * gv;
                *vv = self.beta2 * *vv + (1.0 - self.beta2) * gv * gv;
                let mhat = *mv / c1;
                let vhat = *vv / c2;
                *pv -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

/// Learning rate at a 0-based epoch: `base · factor^(epoch / period)`.
pub fn step_decay(base: f64, epoch: usize, period: usize, factor: f64) -> f64 {
    if period == 0 {
        return base;
    }
    base * factor.powi((epoch / period) as i32)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = Tensor::new(vec![3], vec![1.0, -2.0, 0.5]).unwrap();
        let before = p.clone();
        let mut st = AdamState::new(1e-3, &[&p]);
        st.step(&mut [&mut p], &[Tensor::zeros(&[3])]).unwrap();
        assert_eq!(p, before);
        assert_eq!(st.step, 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // With g constant, m̂ = g and v̂ = g², so the step is lr·g/(|g|+eps).
        let lr = 5e-4;
        let mut p = Tensor::scalar(0.0);
        let mut st = AdamState::new(lr, &[&p]);
        st.step(&mut [&mut p], &[Tensor::scalar(1.0)]).unwrap();
        let expected = -lr * 1.0 / (1.0 + 1e-8);
        assert!((p.data()[0] - expected).abs() < 1e-18);
        // Repeated unit gradients keep the per-step magnitude at lr.
        let prev = p.data()[0];
        st.step(&mut [&mut p], &[Tensor::scalar(1.0)]).unwrap();
        assert!(((prev - p.data()[0]) - lr).abs() < 1e-10);
    }

    #[test]
    fn non_finite_gradient_rejected() {
        let mut p = Tensor::scalar(1.0);
        let mut st = AdamState::new(1e-3, &[&p]);
        let err = st.step(&mut [&mut p], &[Tensor::scalar(f64::NAN)]);
        assert!(matches!(err, Err(Error::Numerical(_))));
        assert_eq!(st.step, 0);
        assert_eq!(p.data()[0], 1.0);
    }

    #[test]
    fn decay_schedule() {
        let base = 5e-5;
        assert_eq!(step_decay(base, 0, 200, 0.1), base);
        assert_eq!(step_decay(base, 199, 200, 0.1), base);
        assert!((step_decay(base, 200, 200, 0.1) - 0.1 * base).abs() < 1e-20);
        assert!((step_decay(base, 400, 200, 0.1) - 0.01 * base).abs() < 1e-20);
    }
}
