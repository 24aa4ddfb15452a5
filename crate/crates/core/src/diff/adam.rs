use serde::{Deserialize, Serialize};

use super::ParamStore;
use crate::error::{invalid, Result};
use crate::tensor::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias correction. Moment buffers are kept alongside, not
/// inside, the parameter store.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    pub config: AdamConfig,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(store: &ParamStore<T>, config: AdamConfig) -> Self {
        let zeros: Vec<Vec<T>> = store.ids().map(|id| vec![T::zero(); store.get(id).len()]).collect();
        Self {
            config,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn moments(&self) -> (&[Vec<T>], &[Vec<T>]) {
        (&self.m, &self.v)
    }

    pub fn set_moments(&mut self, m: Vec<Vec<T>>, v: Vec<Vec<T>>) {
        self.m = m;
        self.v = v;
    }

    /// Applies one update using the gradients currently held in `store`.
    /// Gradients are left untouched; frozen parameters are skipped.
    pub fn step(&mut self, store: &mut ParamStore<T>, lr: f64) -> Result<()> {
        if !(lr > 0.0) {
            return invalid(format!("learning rate must be positive, got {lr}"));
        }
        store.bump_step();
        let t = store.step() as i32;
        let AdamConfig { beta1, beta2, eps } = self.config;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
        let (b1, b2) = (T::lit(beta1), T::lit(beta2));
        let (ob1, ob2) = (T::lit(1.0 - beta1), T::lit(1.0 - beta2));
        let step_size = T::lit(lr / bc1);
        let inv_bc2 = T::lit(1.0 / bc2);
        let eps = T::lit(eps);

        for ((value, grad, trainable), (m, v)) in store
            .values_and_grads_mut()
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            if !trainable {
                continue;
            }
            for i in 0..value.len() {
                let g = grad[i];
                m[i] = b1 * m[i] + ob1 * g;
                v[i] = b2 * v[i] + ob2 * g * g;
                let vhat = v[i] * inv_bc2;
                value[i] -= step_size * m[i] / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
