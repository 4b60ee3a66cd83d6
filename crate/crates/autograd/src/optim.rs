//! First-order optimizers over the trainable entries of a [`ParamStore`].

use serde::{Deserialize, Serialize};

use crate::error::{AutogradError, Result};
use crate::param::ParamStore;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerKind {
    Adam { beta1: f64, beta2: f64, eps: f64 },
    Sgd,
}

impl OptimizerKind {
    pub fn adam() -> Self {
        OptimizerKind::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Optimizer<T: Scalar = f32> {
    pub kind: OptimizerKind,
    pub lr: f64,
    step: u64,
    first: Vec<Tensor<T>>,
    second: Vec<Tensor<T>>,
}

impl<T: Scalar> Optimizer<T> {
    pub fn new(kind: OptimizerKind, lr: f64) -> Self {
        Self {
            kind,
            lr,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn adam(lr: f64) -> Self {
        Self::new(OptimizerKind::adam(), lr)
    }

    pub fn sgd(lr: f64) -> Self {
        Self::new(OptimizerKind::Sgd, lr)
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update to every trainable parameter that received a gradient.
    /// Gradients are left in place; call [`ParamStore::zero_grad`] explicitly.
    pub fn step(&mut self, store: &mut ParamStore<T>) -> Result<()> {
        if !store.iter().any(|(_, p)| p.trainable && p.has_grad()) {
            return Err(AutogradError::MissingGradients);
        }
        if self.first.len() != store.len() {
            self.first = store.iter().map(|(_, p)| Tensor::zeros(p.value.shape())).collect();
            self.second = self.first.clone();
        }
        self.step += 1;
        let lr = self.lr;
        let t = self.step as i32;
        for (i, p) in store.params_mut().iter_mut().enumerate() {
            if !p.trainable || !p.has_grad {
                continue;
            }
            match self.kind {
                OptimizerKind::Sgd => {
                    let lr = T::from_f64_lossy(lr);
                    for (w, &g) in p.value.data_mut().iter_mut().zip(p.grad.data()) {
                        *w = *w - lr * g;
                    }
                }
                OptimizerKind::Adam { beta1, beta2, eps } => {
                    let c1 = 1.0 - beta1.powi(t);
                    let c2 = 1.0 - beta2.powi(t);
                    let (b1, b2) = (T::from_f64_lossy(beta1), T::from_f64_lossy(beta2));
                    let (lr_t, eps_t) = (T::from_f64_lossy(lr), T::from_f64_lossy(eps));
                    let (c1, c2) = (T::from_f64_lossy(c1), T::from_f64_lossy(c2));
                    let m = self.first[i].data_mut();
                    let v = self.second[i].data_mut();
                    for (((w, &g), m), v) in p.value.data_mut().iter_mut().zip(p.grad.data()).zip(m).zip(v) {
                        *m = b1 * *m + (T::one() - b1) * g;
                        *v = b2 * *v + (T::one() - b2) * g * g;
                        let mhat = *m / c1;
                        let vhat = *v / c2;
                        *w = *w - lr_t * mhat / (vhat.sqrt() + eps_t);
                    }
                }
            }
        }
        Ok(())
    }
}
