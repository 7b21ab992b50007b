use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::numeric::{Matrix, ParamStore};

/// Adam with bias correction. Moments are created lazily for the
/// parameters an optimizer actually touches.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    moments: BTreeMap<String, (Matrix, Matrix)>,
}

impl AdamState {
    pub fn new(lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        AdamState {
            lr,
            beta1,
            beta2,
            eps,
            step: 0,
            moments: BTreeMap::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One update of every parameter whose name passes `filter`, using the
    /// gradients currently accumulated in `params`. Everything else is left
    /// untouched.
    pub fn step(&mut self, params: &mut ParamStore, filter: impl Fn(&str) -> bool) -> Result<()> {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (name, p) in params.iter_mut() {
            if !filter(name) {
                continue;
            }
            let shape = p.value.shape();
            let (m, v) = self
                .moments
                .entry(name.to_owned())
                .or_insert_with(|| (Matrix::zeros(shape.0, shape.1), Matrix::zeros(shape.0, shape.1)));
            if m.shape() != shape || p.grad.shape() != shape {
                return Err(Error::Internal(format!(
                    "adam: `{name}` drifted from {:?} to {shape:?}",
                    m.shape()
                )));
            }
            let values = p.value.as_mut_slice();
            let grads = p.grad.as_slice();
            for (((w, g), m), v) in values
                .iter_mut()
                .zip(grads)
                .zip(m.as_mut_slice())
                .zip(v.as_mut_slice())
            {
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                let m_hat = *m / c1;
                let v_hat = *v / c2;
                *w -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}
