//! Bias-corrected Adam with a multiplicative per-epoch learning-rate decay.

use crate::error::{AutodiffError, Result};
use crate::param::ParamStore;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct Adam<T> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    first: Vec<Tensor<T>>,
    second: Vec<Tensor<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(store: &ParamStore<T>, lr: f64) -> Self {
        let zeros = || store.iter().map(|p| Tensor::zeros(p.value.shape())).collect();
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            first: zeros(),
            second: zeros(),
        }
    }

    /// Restores a saved optimizer state; moment shapes must match the store.
    pub fn from_state(
        store: &ParamStore<T>,
        lr: f64,
        step: u64,
        first: Vec<Tensor<T>>,
        second: Vec<Tensor<T>>,
    ) -> Result<Self> {
        for ((p, m), v) in store.iter().zip(&first).zip(&second) {
            if p.value.shape() != m.shape() || p.value.shape() != v.shape() {
                return Err(AutodiffError::ShapeMismatch {
                    op: "adam_restore",
                    lhs: p.value.shape().to_vec(),
                    rhs: m.shape().to_vec(),
                });
            }
        }
        if first.len() != store.len() || second.len() != store.len() {
            return Err(AutodiffError::InvalidArgument {
                op: "adam_restore",
                msg: format!("{} parameters, {} moments", store.len(), first.len()),
            });
        }
        Ok(Adam {
            lr,
            step,
            first,
            second,
            ..Adam::new(store, lr)
        })
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn first_moments(&self) -> &[Tensor<T>] {
        &self.first
    }

    pub fn second_moments(&self) -> &[Tensor<T>] {
        &self.second
    }

    /// Epoch-boundary scheduler hook.
    pub fn decay_lr(&mut self, factor: f64) {
        self.lr *= factor;
    }

    /// Applies one update from the gradients accumulated in `store`.
    /// Nothing is modified if any gradient is non-finite.
    pub fn step(&mut self, store: &mut ParamStore<T>) -> Result<()> {
        if let Some(p) = store.iter().find(|p| !p.grad.all_finite()) {
            return Err(AutodiffError::NonFiniteGradient(p.name.clone()));
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for ((p, m), v) in store
            .iter_mut()
            .zip(self.first.iter_mut())
            .zip(self.second.iter_mut())
        {
            let g = p.grad.data();
            let (md, vd) = (m.data_mut(), v.data_mut());
            for (i, w) in p.value.data_mut().iter_mut().enumerate() {
                let gi = g[i].as_f64();
                let mi = self.beta1 * md[i].as_f64() + (1.0 - self.beta1) * gi;
                let vi = self.beta2 * vd[i].as_f64() + (1.0 - self.beta2) * gi * gi;
                md[i] = T::from_f64(mi);
                vd[i] = T::from_f64(vi);
                let update = self.lr * (mi / bc1) / ((vi / bc2).sqrt() + self.eps);
                *w = T::from_f64(w.as_f64() - update);
            }
        }
        Ok(())
    }
}
