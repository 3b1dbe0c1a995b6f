use std::collections::BTreeMap;
use std::f64::consts::PI;

use ndarray::ArrayD;
use serde::{Deserialize, Serialize};

use crate::nn::{Gradients, ParamId, ParamStore};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrSchedule {
    /// Half-cosine from the initial rate at the first step to 0 at the last.
    #[default]
    Cosine,
    Constant,
}

impl LrSchedule {
    /// Learning rate of step `step` (0-based) out of `total_steps`.
    pub fn lr_at(self, initial: f64, step: usize, total_steps: usize) -> f64 {
        match self {
            LrSchedule::Constant => initial,
            LrSchedule::Cosine if total_steps <= 1 => initial,
            LrSchedule::Cosine => {
                let progress = step.min(total_steps - 1) as f64 / (total_steps - 1) as f64;
                0.5 * initial * (1.0 + (PI * progress).cos())
            }
        }
    }
}

/// Rescales `grads` so their joint L2 norm is at most `max_norm`; returns the
/// norm before clipping.
pub fn clip_global_norm(grads: &mut Gradients, max_norm: f64) -> f64 {
    let norm = grads.global_norm();
    if norm > max_norm {
        grads.scale(max_norm / norm);
    }
    norm
}

/// SGD with heavy-ball momentum: `v = m * v + g`, `p -= lr * v`.
#[derive(Clone, Debug)]
pub struct Sgd {
    momentum: f64,
    velocity: BTreeMap<ParamId, ArrayD<f64>>,
}

impl Sgd {
    pub fn new(momentum: f64) -> Self {
        Sgd {
            momentum,
            velocity: BTreeMap::new(),
        }
    }

    pub fn step(&mut self, params: &mut ParamStore, grads: &Gradients, lr: f64) {
        for (id, g) in grads.iter() {
            if !params.is_trainable(id) {
                continue;
            }
            let v = match self.velocity.get_mut(&id) {
                Some(v) => {
                    v.zip_mut_with(g, |v, g| *v = self.momentum * *v + g);
                    v
                }
                None => self.velocity.entry(id).or_insert_with(|| g.clone()),
            };
            params.get_mut(id).zip_mut_with(v, |p, v| *p -= lr * v);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::IxDyn;

    fn grads(values: &[(ParamId, ArrayD<f64>)], n: usize) -> Gradients {
        let mut g = Gradients::new(n);
        for (id, v) in values {
            g.accumulate(*id, v.clone());
        }
        g
    }

    #[test]
    fn cosine_schedule_endpoints() {
        let s = LrSchedule::Cosine;
        assert_eq!(s.lr_at(0.01, 0, 100), 0.01);
        assert!(s.lr_at(0.01, 99, 100).abs() < 1e-9);
        assert!((s.lr_at(0.01, 50, 101) - 0.005).abs() < 1e-12);
        let lrs: Vec<f64> = (0..100).map(|k| s.lr_at(0.01, k, 100)).collect();
        assert!(lrs.windows(2).all(|w| w[1] <= w[0]));
        assert_eq!(LrSchedule::Constant.lr_at(0.01, 99, 100), 0.01);
    }

    #[test]
    fn clipping_to_norm_three() {
        let mut store = ParamStore::new();
        let a = store.add("a", ArrayD::zeros(IxDyn(&[2])), true);
        let b = store.add("b", ArrayD::zeros(IxDyn(&[1])), true);
        // Norm sqrt(18^2 + 24^2) = 30.
        let mut g = grads(
            &[(a, ArrayD::from_shape_vec(IxDyn(&[2]), vec![18.0, 0.0]).unwrap()), (b, ArrayD::from_elem(IxDyn(&[1]), 24.0))],
            2,
        );
        assert!((clip_global_norm(&mut g, 3.0) - 30.0).abs() < 1e-12);
        assert!((g.global_norm() - 3.0).abs() < 1e-12);
        assert!((g.get(a).unwrap()[0] - 1.8).abs() < 1e-12);
        let before = g.global_norm();
        clip_global_norm(&mut g, 5.0);
        assert_eq!(g.global_norm(), before);
    }

    #[test]
    fn momentum_accumulates_like_the_recurrence() {
        let mut store = ParamStore::new();
        let p = store.add("p", ArrayD::from_elem(IxDyn(&[1]), 1.0), true);
        let buf = store.add("buf", ArrayD::from_elem(IxDyn(&[1]), 1.0), false);
        let mut opt = Sgd::new(0.9);
        let g = grads(&[(p, ArrayD::from_elem(IxDyn(&[1]), 2.0)), (buf, ArrayD::from_elem(IxDyn(&[1]), 2.0))], 2);
        opt.step(&mut store, &g, 0.1);
        assert!((store.get(p)[0] - 0.8).abs() < 1e-15);
        opt.step(&mut store, &g, 0.1);
        // v = 0.9 * 2 + 2 = 3.8
        assert!((store.get(p)[0] - 0.42).abs() < 1e-12);
        assert_eq!(store.get(buf)[0], 1.0);
    }
}
