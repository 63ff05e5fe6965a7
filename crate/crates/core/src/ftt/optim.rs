use std::collections::BTreeMap;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::autodiff::ParamId;
use crate::error::{Error, Result};
use crate::nn::ParamStore;
use crate::tensor::Tensor;

/// Cosine annealing from `base` at epoch 0 to 0 at `total`.
pub fn cosine_lr(base: f64, epoch: usize, total: usize) -> f64 {
    if total == 0 {
        return base;
    }
    let t = epoch.min(total) as f64 / total as f64;
    0.5 * base * (1.0 + (PI * t).cos())
}

/// SGD with heavy-ball momentum and coupled weight decay:
/// `v ← μ·v + g + λ·w`, `w ← w − η·v`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sgd {
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: BTreeMap<usize, Vec<f64>>,
}

impl Sgd {
    pub fn new(momentum: f64, weight_decay: f64) -> Self {
        Self { momentum, weight_decay, velocity: BTreeMap::new() }
    }

    /// Update the parameters named in `grads`; every other entry of `store`
    /// is left bit-identical.
    pub fn step(&mut self, store: &mut ParamStore, grads: &BTreeMap<ParamId, Tensor>, lr: f64) -> Result<()> {
        for (id, g) in grads {
            if !g.all_finite() {
                return Err(Error::NonFinite { context: format!("gradient of {}", store.name(*id)) });
            }
        }
        for (&id, g) in grads {
            let w = store.value_mut(id);
            if w.len() != g.len() {
                return Err(Error::shape(format!("gradient length {} for parameter of {}", g.len(), w.len())));
            }
            let v = self.velocity.entry(id.0).or_insert_with(|| vec![0.0; g.len()]);
            for ((wi, vi), gi) in w.data_mut().iter_mut().zip(v.iter_mut()).zip(g.data()) {
                *vi = self.momentum * *vi + gi + self.weight_decay * *wi;
                *wi -= lr * *vi;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cosine_endpoints() {
        assert_eq!(cosine_lr(0.05, 0, 10), 0.05);
        assert!(cosine_lr(0.05, 10, 10).abs() < 1e-18);
        assert!((cosine_lr(0.05, 5, 10) - 0.025).abs() < 1e-15);
    }

    #[test]
    fn momentum_recurrence() {
        let mut store = ParamStore::new();
        let id = store.add("w", Tensor::from_vec(vec![1.0]), crate::nn::ParamRole::LinearBias).unwrap();
        let mut sgd = Sgd::new(0.9, 0.1);
        let g: BTreeMap<_, _> = [(id, Tensor::from_vec(vec![0.5]))].into();
        sgd.step(&mut store, &g, 0.1).unwrap();
        // v = 0.5 + 0.1·1 = 0.6, w = 1 - 0.06
        assert!((store.value(id).data()[0] - 0.94).abs() < 1e-15);
        sgd.step(&mut store, &g, 0.1).unwrap();
        let v2 = 0.9 * 0.6 + 0.5 + 0.1 * 0.94;
        assert!((store.value(id).data()[0] - (0.94 - 0.1 * v2)).abs() < 1e-15);
    }
}
