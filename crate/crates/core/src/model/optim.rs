use ndarray::{Array2, Zip};
use serde::{Deserialize, Serialize};

use super::params::{Group, ParamStore};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimConfig {
    pub lr_transformer: f64,
    pub lr_graph: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub warmup_steps: u64,
    /// Learning rates decay linearly to zero at this step; 0 keeps them flat
    /// after warmup.
    pub decay_steps: u64,
    pub clip_norm: f64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig {
            lr_transformer: 3e-4,
            lr_graph: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-2,
            warmup_steps: 100,
            decay_steps: 0,
            clip_norm: 1.0,
        }
    }
}

impl OptimConfig {
    /// Multiplier applied to both base rates at (zero-based) `step`.
    pub fn lr_scale(&self, step: u64) -> f64 {
        let warm = if self.warmup_steps == 0 {
            1.0
        } else {
            ((step + 1) as f64 / self.warmup_steps as f64).min(1.0)
        };
        let decay = if self.decay_steps == 0 {
            1.0
        } else {
            (1.0 - step as f64 / self.decay_steps as f64).max(0.0)
        };
        warm * decay
    }

    pub fn lr(&self, group: Group, step: u64) -> f64 {
        let base = match group {
            Group::Transformer => self.lr_transformer,
            Group::Graph => self.lr_graph,
        };
        base * self.lr_scale(step)
    }
}

/// Adam with decoupled weight decay, one moment pair per parameter matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamW {
    pub config: OptimConfig,
    pub m: Vec<Array2<f64>>,
    pub v: Vec<Array2<f64>>,
    /// Updates applied so far.
    pub t: u64,
}

impl AdamW {
    pub fn new(config: OptimConfig, params: &ParamStore) -> Self {
        AdamW {
            config,
            m: params.zeros_like(),
            v: params.zeros_like(),
            t: 0,
        }
    }

    /// Applies one update from `grads` and returns the transformer-group rate used.
    pub fn update(&mut self, params: &mut ParamStore, grads: &[Array2<f64>]) -> f64 {
        let c = &self.config;
        let step = self.t;
        self.t += 1;
        let bc1 = 1.0 - c.beta1.powi(self.t as i32);
        let bc2 = 1.0 - c.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            let lr = c.lr(params.group(i), step);
            let wd = if params.decays(i) { c.weight_decay } else { 0.0 };
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            Zip::from(params.value_mut(i))
                .and(m)
                .and(v)
                .and(&grads[i])
                .for_each(|p, m, v, &g| {
                    *m = c.beta1 * *m + (1.0 - c.beta1) * g;
                    *v = c.beta2 * *v + (1.0 - c.beta2) * g * g;
                    let mhat = *m / bc1;
                    let vhat = *v / bc2;
                    *p -= lr * (mhat / (vhat.sqrt() + c.eps) + wd * *p);
                });
        }
        c.lr(Group::Transformer, step)
    }
}

pub fn global_norm(grads: &[Array2<f64>]) -> f64 {
    grads.iter().flat_map(|g| g.iter()).map(|x| x * x).sum::<f64>().sqrt()
}

/// Rescales `grads` so their global norm is at most `max_norm`; returns the
/// norm before clipping.
pub fn clip_grad_norm(grads: &mut [Array2<f64>], max_norm: f64) -> f64 {
    let norm = global_norm(grads);
    if max_norm > 0.0 && norm > max_norm {
        let s = max_norm / norm;
        for g in grads.iter_mut() {
            g.mapv_inplace(|x| x * s);
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_warms_up_then_decays() {
        let c = OptimConfig {
            warmup_steps: 4,
            decay_steps: 10,
            ..Default::default()
        };
        assert!((c.lr_scale(0) - 0.25).abs() < 1e-12);
        assert!((c.lr_scale(3) - 0.7).abs() < 1e-12);
        assert_eq!(c.lr_scale(10), 0.0);
        assert!((c.lr(Group::Graph, 5) - 1e-3 * 0.5).abs() < 1e-15);
    }

    #[test]
    fn clipping_caps_norm() {
        let mut g = vec![Array2::from_elem((1, 2), 3.0), Array2::from_elem((1, 1), 4.0)];
        // sqrt(9 + 9 + 16)
        let n = clip_grad_norm(&mut g, 1.0);
        assert!((n - 34f64.sqrt()).abs() < 1e-12);
        assert!((global_norm(&g) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn first_adam_step_moves_by_lr() {
        // With bias correction, the first step is lr * g / (|g| + eps).
        let mut p = ParamStore::default();
        p.push("w", Array2::zeros((1, 2)), Group::Transformer, false);
        p.push("g", Array2::zeros((1, 1)), Group::Graph, true);
        let c = OptimConfig {
            warmup_steps: 0,
            eps: 0.0,
            ..Default::default()
        };
        let mut opt = AdamW::new(c, &p);
        let grads = vec![Array2::from_shape_vec((1, 2), vec![0.5, -2.0]).unwrap(), Array2::from_elem((1, 1), 1.0)];
        opt.update(&mut p, &grads);
        assert!((p.value(0)[[0, 0]] + 3e-4).abs() < 1e-15);
        assert!((p.value(0)[[0, 1]] - 3e-4).abs() < 1e-15);
        assert!((p.value(1)[[0, 0]] + 1e-3).abs() < 1e-15);
    }
}
