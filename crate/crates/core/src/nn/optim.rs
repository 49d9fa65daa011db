use super::params::{ParamId, ParamStore};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            weight_decay: 1e-2,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with decoupled weight decay and bias-corrected moments.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub config: AdamWConfig,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamW {
    pub fn new(config: AdamWConfig) -> Self {
        Self {
            config,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update. Only trainable parameters with a gradient move.
    pub fn step(&mut self, store: &mut ParamStore, grads: &[(ParamId, Vec<f64>)]) {
        self.step += 1;
        let c = self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        if self.m.len() < store.len() {
            self.m.resize(store.len(), Vec::new());
            self.v.resize(store.len(), Vec::new());
        }
        for (id, g) in grads {
            if !store.get(*id).trainable {
                continue;
            }
            let m = &mut self.m[id.0];
            let v = &mut self.v[id.0];
            if m.len() != g.len() {
                *m = vec![0.0; g.len()];
                *v = vec![0.0; g.len()];
            }
            let theta = store.values_mut(*id);
            for k in 0..g.len() {
                m[k] = c.beta1 * m[k] + (1.0 - c.beta1) * g[k];
                v[k] = c.beta2 * v[k] + (1.0 - c.beta2) * g[k] * g[k];
                let mhat = m[k] / bc1;
                let vhat = v[k] / bc2;
                theta[k] -= c.lr * c.weight_decay * theta[k];
                theta[k] -= c.lr * mhat / (vhat.sqrt() + c.eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_param(v: f64) -> (ParamStore, ParamId) {
        let mut s = ParamStore::new();
        let id = s.add("w", &[1], vec![v]);
        (s, id)
    }

    #[test]
    fn zero_gradient_without_decay_is_a_no_op() {
        let (mut s, id) = one_param(0.37);
        let mut opt = AdamW::new(AdamWConfig {
            weight_decay: 0.0,
            ..Default::default()
        });
        for _ in 0..5 {
            opt.step(&mut s, &[(id, vec![0.0])]);
        }
        assert_eq!(s.values(id), &[0.37]);
    }

    #[test]
    fn first_step_matches_hand_computation() {
        // with bias correction the first step is lr * g / (|g| + eps)
        let (mut s, id) = one_param(1.0);
        let cfg = AdamWConfig {
            lr: 0.1,
            weight_decay: 0.5,
            ..Default::default()
        };
        let mut opt = AdamW::new(cfg);
        opt.step(&mut s, &[(id, vec![2.0])]);
        let decayed = 1.0 - 0.1 * 0.5 * 1.0;
        let expected = decayed - 0.1 * 2.0 / (2.0 + 1e-8);
        assert!((s.values(id)[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn frozen_parameters_do_not_move() {
        let (mut s, id) = one_param(1.0);
        s.set_trainable("w", false);
        let mut opt = AdamW::new(AdamWConfig::default());
        opt.step(&mut s, &[(id, vec![3.0])]);
        assert_eq!(s.values(id), &[1.0]);
    }

    #[test]
    fn minimizes_a_quadratic() {
        let (mut s, id) = one_param(5.0);
        let mut opt = AdamW::new(AdamWConfig {
            lr: 0.05,
            weight_decay: 0.0,
            ..Default::default()
        });
        for _ in 0..2000 {
            let w = s.values(id)[0];
            opt.step(&mut s, &[(id, vec![2.0 * (w - 1.5)])]);
        }
        assert!((s.values(id)[0] - 1.5).abs() < 1e-3);
    }
}
