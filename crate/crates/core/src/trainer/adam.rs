use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
}

fn default_beta1() -> f64 {
    0.9
}

fn default_beta2() -> f64 {
    0.999
}

fn default_eps() -> f64 {
    1e-8
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig {
            lr,
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_eps(),
        }
    }
}

/// Adam with bias correction. Moments are kept only for parameters that
/// were trainable when a step was applied.
#[derive(Clone, Debug)]
pub struct Adam<T> {
    pub config: AdamConfig,
    step: u64,
    moments: BTreeMap<usize, (Vec<T>, Vec<T>)>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(config: AdamConfig) -> Self {
        Adam {
            config,
            step: 0,
            moments: BTreeMap::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn has_moments(&self, index: usize) -> bool {
        self.moments.contains_key(&index)
    }

    /// Updates every trainable parameter from its gradient, then clears all
    /// gradients. Frozen parameters are never written.
    pub fn step(&mut self, store: &mut ParamStore<T>) -> Result<()> {
        if let Some((_, p)) = store.iter().find(|(_, p)| p.trainable && p.grad.is_none()) {
            return Err(Error::Consistency(format!("missing gradient for trainable parameter {}", p.name)));
        }
        self.apply(store);
        Ok(())
    }

    /// Like [`Adam::step`], but trainable parameters without a gradient are
    /// left untouched, moments included. Used when a batch need not reach
    /// every trainable parameter.
    pub fn step_available(&mut self, store: &mut ParamStore<T>) {
        self.apply(store);
    }

    fn apply(&mut self, store: &mut ParamStore<T>) {
        self.step += 1;
        let c = self.config;
        let t = self.step as i32;
        let bc1 = T::of(1.0 - c.beta1.powi(t));
        let bc2 = T::of(1.0 - c.beta2.powi(t));
        let (b1, b2) = (T::of(c.beta1), T::of(c.beta2));
        let (lr, eps) = (T::of(c.lr), T::of(c.eps));
        for (id, p) in store.iter_mut() {
            let grad = p.grad.take();
            let (true, Some(grad)) = (p.trainable, grad) else {
                continue;
            };
            let n = grad.len();
            let (m, v) = self
                .moments
                .entry(id.index())
                .or_insert_with(|| (vec![T::zero(); n], vec![T::zero(); n]));
            let w = p.value.data_mut();
            for i in 0..n {
                let g = grad[i];
                m[i] = b1 * m[i] + (T::one() - b1) * g;
                v[i] = b2 * v[i] + (T::one() - b2) * g * g;
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                w[i] -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
    }
}
