//! Adam with bias correction.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::params::{Gradients, ParamStore};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self { lr, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.lr >= 0.0
            && self.lr.is_finite()
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::contract(format!("invalid optimizer settings {self:?}")))
        }
    }
}

/// Optimizer state: moment estimates per parameter name and a step count.
#[derive(Clone, Debug)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    first: BTreeMap<String, Tensor>,
    second: BTreeMap<String, Tensor>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self { config, step: 0, first: BTreeMap::new(), second: BTreeMap::new() })
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Updates exactly the parameters named in `grads`.
    pub fn step(&mut self, params: &mut ParamStore, grads: &Gradients) -> Result<()> {
        if grads.is_empty() {
            return Err(Error::contract("optimizer step without gradients"));
        }
        for (name, g) in grads.iter() {
            let p = params.get(name)?;
            if p.shape() != g.shape() {
                return Err(Error::dim(format!("gradient for {name} has shape {:?}, parameter {:?}", g.shape(), p.shape())));
            }
        }
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let c1 = 1.0 - beta1.powf(self.step as f64);
        let c2 = 1.0 - beta2.powf(self.step as f64);
        for (name, g) in grads.iter() {
            let m = self.first.entry(name.to_string()).or_insert_with(|| Tensor::zeros(g.shape()));
            let v = self.second.entry(name.to_string()).or_insert_with(|| Tensor::zeros(g.shape()));
            let mut p = params.get(name)?.clone();
            for (((w, &gi), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m.data_mut()).zip(v.data_mut()) {
                *mi = beta1 * *mi + (1.0 - beta1) * gi;
                *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
                let update = lr * (*mi / c1) / ((*vi / c2).sqrt() + eps);
                *w -= update;
            }
            if p.data().iter().any(|&w| !(w as f32).is_finite()) {
                return Err(Error::Divergence(format!("parameter {name} became non-finite at step {}", self.step)));
            }
            params.insert(name, p);
        }
        Ok(())
    }
}
