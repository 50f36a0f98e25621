use serde::{Deserialize, Serialize};

use super::{ParamKind, ParamStore, Result, Tensor, TensorError};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig {
            lr,
            ..Self::default()
        }
    }
}

/// Moment estimates for every entry of a [`ParamStore`].
#[derive(Debug, Clone)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    /// Number of completed steps.
    pub t: u64,
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(config: AdamConfig, store: &ParamStore<T>) -> Self {
        let zeros = |e: &super::ParamEntry<T>| vec![T::zero(); e.value.numel()];
        AdamState {
            config,
            t: 0,
            m: store.entries().iter().map(zeros).collect(),
            v: store.entries().iter().map(zeros).collect(),
        }
    }

    /// One bias-corrected Adam update of every trainable entry that has a
    /// gradient. `grads` is indexed like the store. Nothing is modified if any
    /// gradient is non-finite.
    pub fn step(&mut self, store: &mut ParamStore<T>, grads: &[Option<Tensor<T>>]) -> Result<()> {
        assert_eq!(grads.len(), store.len(), "one gradient slot per parameter");
        for (e, g) in store.entries().iter().zip(grads) {
            if let Some(g) = g {
                if g.shape() != e.value.shape() {
                    return Err(TensorError::dim("adam_step", e.value.shape(), g.shape()));
                }
                if !g.all_finite() {
                    return Err(TensorError::NonFiniteGradient(e.name.clone()));
                }
            }
        }
        self.t += 1;
        let c = self.config;
        let lr = T::from_f64_lossy(c.lr);
        let (b1, b2, eps) = (T::from_f64_lossy(c.beta1), T::from_f64_lossy(c.beta2), T::from_f64_lossy(c.eps));
        let t = self.t as i32;
        let bc1 = T::one() - b1.powi(t);
        let bc2 = T::one() - b2.powi(t);
        for (i, (e, g)) in store.entries_mut().iter_mut().zip(grads).enumerate() {
            let Some(g) = g else { continue };
            if e.kind != ParamKind::Trainable {
                continue;
            }
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (((p, &gi), mi), vi) in e.value.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = b1 * *mi + (T::one() - b1) * gi;
                *vi = b2 * *vi + (T::one() - b2) * gi * gi;
                let m_hat = *mi / bc1;
                let v_hat = *vi / bc2;
                *p -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
