use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::numerics::{ParamGrads, ParamStore, Tensor};

/// Adam with bias-corrected moments.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    first: BTreeMap<String, Tensor>,
    second: BTreeMap<String, Tensor>,
}

impl Default for Adam {
    fn default() -> Self {
        Adam::new(1e-3)
    }
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            first: BTreeMap::new(),
            second: BTreeMap::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self, name: &str) -> Option<&Tensor> {
        self.first.get(name)
    }

    pub fn second_moment(&self, name: &str) -> Option<&Tensor> {
        self.second.get(name)
    }

    /// Applies one update to every trainable parameter of `params`.
    pub fn update(&mut self, params: &mut ParamStore, grads: &ParamGrads) -> Result<()> {
        let names: Vec<String> = params
            .entries()
            .iter()
            .filter(|e| e.trainable)
            .map(|e| e.name.clone())
            .collect();
        for name in &names {
            let g = grads.get(name).ok_or_else(|| Error::Key(name.clone()))?;
            let p = params.get(name)?;
            if g.shape() != p.shape() {
                return Err(Error::shape("adam_update", p.shape(), g.shape()));
            }
        }

        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for name in names {
            let g = &grads[&name];
            let entry = params.entry_mut(&name)?;
            let shape = entry.tensor.shape().to_vec();
            let m = self.first.entry(name.clone()).or_insert_with(|| Tensor::zeros(&shape));
            let v = self.second.entry(name.clone()).or_insert_with(|| Tensor::zeros(&shape));
            let (b1, b2) = (self.beta1, self.beta2);
            let theta = entry.tensor.data_mut();
            for (((th, mi), vi), gi) in theta.iter_mut().zip(m.data_mut()).zip(v.data_mut()).zip(g.data()) {
                *mi = b1 * *mi + (1.0 - b1) * gi;
                *vi = b2 * *vi + (1.0 - b2) * gi * gi;
                let m_hat = *mi / bc1;
                let v_hat = *vi / bc2;
                *th -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}
