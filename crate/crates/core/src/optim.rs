//! Adamax and the one-cycle learning-rate schedule.

use serde::{Deserialize, Serialize};

use crate::params::{ParamGrads, ParamStore};
use crate::tensor::Tensor;

/// Adam with the infinity norm (Kingma & Ba, §7.1).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Adamax {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Tensor>,
    u: Vec<Tensor>,
}

impl Adamax {
    pub fn new(store: &ParamStore) -> Self {
        let zeros: Vec<Tensor> = store.entries().iter().map(|e| Tensor::zeros(e.value.rows(), e.value.cols())).collect();
        Adamax { beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, m: zeros.clone(), u: zeros }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &ParamGrads, lr: f64) {
        self.step += 1;
        let bias = 1.0 - self.beta1.powi(self.step.min(i32::MAX as u64) as i32);
        let ids: Vec<_> = store.ids().collect();
        for (k, id) in ids.into_iter().enumerate() {
            let g = grads.get(id).data();
            let m = self.m[k].data_mut();
            let u = self.u[k].data_mut();
            let p = store.get_mut(id).data_mut();
            for i in 0..p.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                u[i] = (self.beta2 * u[i]).max(g[i].abs() + self.eps);
                p[i] -= lr / bias * m[i] / u[i];
            }
        }
    }
}

/// Cosine one-cycle schedule: warm up from `max_lr/div_factor` to
/// `max_lr` over the first `pct_start` of the steps, then anneal to
/// `max_lr/(div_factor·final_div_factor)`. The peak lands exactly on an
/// integer step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OneCycle {
    pub max_lr: f64,
    pub total_steps: usize,
    pub pct_start: f64,
    pub div_factor: f64,
    pub final_div_factor: f64,
}

impl OneCycle {
    pub fn new(max_lr: f64, total_steps: usize) -> Self {
        OneCycle { max_lr, total_steps, pct_start: 0.3, div_factor: 25.0, final_div_factor: 1e4 }
    }

    /// Index of the step with the peak learning rate.
    pub fn peak_step(&self) -> usize {
        let p = (self.pct_start * self.total_steps as f64).round() as usize;
        p.saturating_sub(1).min(self.total_steps.saturating_sub(1))
    }

    pub fn lr(&self, step: usize) -> f64 {
        let initial = self.max_lr / self.div_factor;
        let min = initial / self.final_div_factor;
        let peak = self.peak_step();
        let last = self.total_steps.saturating_sub(1);
        let anneal = |from: f64, to: f64, pct: f64| to + (from - to) / 2.0 * (1.0 + (std::f64::consts::PI * pct).cos());
        if step <= peak {
            if peak == 0 {
                return self.max_lr;
            }
            anneal(initial, self.max_lr, step as f64 / peak as f64)
        } else {
            let span = (last - peak).max(1) as f64;
            anneal(self.max_lr, min, ((step - peak) as f64 / span).min(1.0))
        }
    }
}
