//! Adam with decoupled weight decay and a linear learning-rate schedule.

use ndarray::{Array2, Zip};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Gradients, ParamId, ParamStore};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

pub struct AdamW {
    cfg: AdamWConfig,
    m: Vec<Array2<f64>>,
    v: Vec<Array2<f64>>,
    decay: Vec<bool>,
    t: u32,
}

impl AdamW {
    /// `decay(name)` selects which parameters receive weight decay.
    pub fn new(params: &ParamStore, cfg: AdamWConfig, decay: impl Fn(&str) -> bool) -> Self {
        AdamW {
            cfg,
            m: params.ids().map(|id| Array2::zeros(params.get(id).raw_dim())).collect(),
            v: params.ids().map(|id| Array2::zeros(params.get(id).raw_dim())).collect(),
            decay: params.ids().map(|id| decay(params.name(id))).collect(),
            t: 0,
        }
    }

    pub fn steps(&self) -> u32 {
        self.t
    }

    pub fn step(&mut self, params: &mut ParamStore, grads: &Gradients, lr: f64) {
        self.t += 1;
        let c = self.cfg;
        let bc1 = 1.0 - c.beta1.powi(self.t as i32);
        let bc2 = 1.0 - c.beta2.powi(self.t as i32);
        for (ParamId(i), g) in grads.iter() {
            Zip::from(&mut self.m[i]).and(g).for_each(|m, &g| *m = c.beta1 * *m + (1.0 - c.beta1) * g);
            Zip::from(&mut self.v[i]).and(g).for_each(|v, &g| *v = c.beta2 * *v + (1.0 - c.beta2) * g * g);
            if lr == 0.0 {
                continue;
            }
            let wd = if self.decay[i] { c.weight_decay } else { 0.0 };
            Zip::from(params.get_mut(ParamId(i)))
                .and(&self.m[i])
                .and(&self.v[i])
                .for_each(|p, &m, &v| {
                    let update = (m / bc1) / ((v / bc2).sqrt() + c.eps);
                    *p -= lr * (update + wd * *p);
                });
        }
    }
}

/// Learning rate decaying linearly from `base` at step 0 to 0 at `total`.
pub fn linear_decay(base: f64, step: usize, total: usize) -> f64 {
    if total == 0 {
        return 0.0;
    }
    base * (1.0 - step as f64 / total as f64).max(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn schedule_endpoints() {
        assert_eq!(linear_decay(1.0, 0, 10), 1.0);
        assert_eq!(linear_decay(1.0, 5, 10), 0.5);
        assert_eq!(linear_decay(1.0, 10, 10), 0.0);
    }

    #[test]
    fn minimizes_quadratic() {
        let mut store = ParamStore::new();
        let id = store.add("x", array![[3.0, -2.0]]);
        let mut opt = AdamW::new(&store, AdamWConfig { weight_decay: 0.0, ..Default::default() }, |_| true);
        for _ in 0..2000 {
            let mut t = crate::autodiff::Tape::new(&store);
            let x = t.param(id);
            let sq = t.mul(x, x);
            let g = t.backward(sq);
            opt.step(&mut store, &g, 0.01);
        }
        assert!(store.get(id).iter().all(|v| v.abs() < 1e-2));
    }

    #[test]
    fn zero_rate_leaves_parameters_alone() {
        let mut store = ParamStore::new();
        let id = store.add("x", array![[0.1234567, -0.0]]);
        let before = store.clone();
        let mut opt = AdamW::new(&store, AdamWConfig::default(), |_| true);
        let mut t = crate::autodiff::Tape::new(&before);
        let x = t.param(id);
        let g = t.backward(x);
        opt.step(&mut store, &g, 0.0);
        assert_eq!(store, before);
    }
}
