//! Bias-corrected Adam.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{ParamKind, ParamStore};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug)]
pub struct AdamState {
    pub cfg: AdamConfig,
    pub step: u64,
    /// First and second moments, indexed like the store's entries; buffers
    /// get empty vectors.
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(store: &ParamStore, cfg: AdamConfig) -> Self {
        let zeros: Vec<Vec<f64>> = store
            .entries()
            .iter()
            .map(|e| match e.kind {
                ParamKind::Trainable => vec![0.0; e.tensor.numel()],
                ParamKind::Buffer => Vec::new(),
            })
            .collect();
        Self {
            cfg,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn moments(&self, index: usize) -> (&[f64], &[f64]) {
        (&self.m[index], &self.v[index])
    }

    /// One update of every trainable tensor from its accumulated gradient.
    /// Tensors without a gradient are left untouched.
    pub fn step(&mut self, store: &mut ParamStore, lr: f64) -> Result<()> {
        if self.m.len() != store.len() {
            return Err(Error::Contract("optimiser state built for a different store".into()));
        }
        for e in store.entries() {
            if let Some(g) = e.tensor.grad() {
                if let Some(i) = g.iter().position(|v| !v.is_finite()) {
                    return Err(Error::NonFinite(format!("gradient of `{}` at element {i}", e.name)));
                }
            }
        }
        self.step += 1;
        let AdamConfig { beta1, beta2, eps } = self.cfg;
        let c1 = 1.0 - beta1.powi(self.step as i32);
        let c2 = 1.0 - beta2.powi(self.step as i32);
        for (i, e) in store.entries_mut().iter_mut().enumerate() {
            if e.kind != ParamKind::Trainable {
                continue;
            }
            let Some(g) = e.tensor.grad().map(<[f64]>::to_vec) else {
                continue;
            };
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (j, p) in e.tensor.data_mut().iter_mut().enumerate() {
                m[j] = beta1 * m[j] + (1.0 - beta1) * g[j];
                v[j] = beta2 * v[j] + (1.0 - beta2) * g[j] * g[j];
                let mhat = m[j] / c1;
                let vhat = v[j] / c2;
                *p -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn scalar_store(p: f64) -> ParamStore {
        let mut s = ParamStore::new();
        s.insert("p", ParamKind::Trainable, Tensor::new(&[1], vec![p]).unwrap());
        s.insert("buf", ParamKind::Buffer, Tensor::new(&[1], vec![5.0]).unwrap());
        s
    }

    fn set_grad(s: &mut ParamStore, g: f64) {
        s.zero_grads();
        s.entries_mut()[0].tensor.accumulate_grad(&[g]).unwrap();
    }

    #[test]
    fn first_step_closed_form() {
        let mut s = scalar_store(0.5);
        let mut adam = AdamState::new(&s, AdamConfig::default());
        set_grad(&mut s, 1.0);
        adam.step(&mut s, 0.01).unwrap();
        let expected = 0.5 - 0.01 * 1.0 / (1.0 + 1e-8);
        assert!((s.entries()[0].tensor.data()[0] - expected).abs() < 1e-15);
        assert_eq!(s.entries()[1].tensor.data()[0], 5.0);
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut s = scalar_store(0.5);
        let mut adam = AdamState::new(&s, AdamConfig::default());
        for _ in 0..5 {
            set_grad(&mut s, 0.0);
            adam.step(&mut s, 0.1).unwrap();
        }
        assert_eq!(s.entries()[0].tensor.data()[0], 0.5);
    }

    #[test]
    fn constant_gradient_moves_by_lr() {
        let mut s = scalar_store(0.0);
        let mut adam = AdamState::new(&s, AdamConfig::default());
        let mut prev = 0.0;
        let mut step = 0.0;
        for _ in 0..2000 {
            set_grad(&mut s, 3.0);
            adam.step(&mut s, 1e-3).unwrap();
            let p = s.entries()[0].tensor.data()[0];
            step = prev - p;
            prev = p;
        }
        assert!((step - 1e-3).abs() < 1e-9);
    }
}
