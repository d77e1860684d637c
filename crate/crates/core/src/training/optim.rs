//! Adam with decoupled weight decay, and the learning-rate schedule.

use crate::autograd::Gradients;
use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step: u64,
    m: Vec<Option<Tensor>>,
    v: Vec<Option<Tensor>>,
}

impl Adam {
    pub fn new(weight_decay: f64) -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay, step: 0, m: Vec::new(), v: Vec::new() }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One update of every trainable parameter. Parameters without a gradient
    /// still receive weight decay when their kind decays.
    pub fn step(&mut self, store: &mut ParamStore, grads: &Gradients, lr: f64) -> Result<()> {
        if !(lr >= 0.0 && lr.is_finite()) {
            return Err(Error::Numeric(format!("learning rate {lr}")));
        }
        self.step += 1;
        let n = store.len();
        self.m.resize(n, None);
        self.v.resize(n, None);
        let c1 = 1.0 - self.beta1.powi(self.step as i32);
        let c2 = 1.0 - self.beta2.powi(self.step as i32);
        for id in store.ids().collect::<Vec<_>>() {
            let kind = store.entry(id).kind;
            if !kind.is_trainable() {
                continue;
            }
            let decay = if kind.decays() { 1.0 - lr * self.weight_decay } else { 1.0 };
            let p = store.get_mut(id);
            if decay != 1.0 {
                p.data_mut().iter_mut().for_each(|x| *x *= decay);
            }
            let Some(g) = grads.get(id) else { continue };
            let m = self.m[id.0].get_or_insert_with(|| Tensor::zeros(g.shape()));
            let v = self.v[id.0].get_or_insert_with(|| Tensor::zeros(g.shape()));
            for (((pi, &gi), mi), vi) in
                p.data_mut().iter_mut().zip(g.data()).zip(m.data_mut()).zip(v.data_mut())
            {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
                *pi -= lr * (*mi / c1) / ((*vi / c2).sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

/// Linear warmup to `start`, then geometric decay to `end` at the last step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LrSchedule {
    pub start: f64,
    pub end: f64,
    pub warmup: usize,
    pub total: usize,
}

impl LrSchedule {
    pub fn new(start: f64, end: f64, warmup: usize, total: usize) -> Result<Self> {
        if !(start >= end && end > 0.0) {
            return Err(Error::Config(format!("need lr_start >= lr_end > 0, got {start}, {end}")));
        }
        Ok(Self { start, end, warmup, total })
    }

    /// Rate for step `t`, counted from 1.
    pub fn at(&self, t: usize) -> f64 {
        if t <= self.warmup {
            return self.start * t as f64 / self.warmup as f64;
        }
        let span = self.total.saturating_sub(self.warmup).max(1);
        let frac = ((t - self.warmup) as f64 / span as f64).min(1.0);
        self.start * (self.end / self.start).powf(frac)
    }
}
