//! Class-weighted cross-entropy over two-way logits.

use serde::{Deserialize, Serialize};

use crate::data::Label;
use crate::error::{dim_err, Error, Result};
use crate::tensor::{Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassWeights {
    pub bona: f64,
    pub spoof: f64,
}

impl Default for ClassWeights {
    fn default() -> Self {
        Self { bona: 9.0, spoof: 1.0 }
    }
}

impl ClassWeights {
    pub fn of(&self, label: Label) -> f64 {
        match label {
            Label::Bona => self.bona,
            Label::Spoof => self.spoof,
        }
    }
}

fn log_softmax_row(z: &[f64]) -> Vec<f64> {
    let mx = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = mx + z.iter().map(|v| (v - mx).exp()).sum::<f64>().ln();
    z.iter().map(|v| v - lse).collect()
}

/// `mean_b( -w[y_b] · log softmax(z_b)[y_b] )` for logits `[B, 2]`.
pub fn wce_loss<'t>(logits: &Var<'t>, labels: &[Label], weights: ClassWeights) -> Result<Var<'t>> {
    let s = logits.shape();
    if labels.is_empty() {
        return Err(Error::Contract("weighted cross-entropy of an empty batch".into()));
    }
    if s.len() != 2 || s[1] != 2 || s[0] != labels.len() {
        return dim_err("wce_loss", format!("logits {s:?} for {} labels", labels.len()));
    }
    let b = labels.len();
    let z = logits.data();
    let mut loss = 0.0;
    let mut probs = Vec::with_capacity(2 * b);
    for (row, &y) in z.chunks_exact(2).zip(labels) {
        let ls = log_softmax_row(row);
        loss -= weights.of(y) * ls[y.class_index()];
        probs.extend(ls.iter().map(|v| v.exp()));
    }
    loss /= b as f64;
    let targets: Vec<(usize, f64)> = labels.iter().map(|&y| (y.class_index(), weights.of(y))).collect();
    logits.tape().push("wce", Tensor::scalar(loss), &[logits], move |g, _| {
        let mut gz = vec![0.0; 2 * b];
        for (i, &(cls, w)) in targets.iter().enumerate() {
            for k in 0..2 {
                let onehot = if k == cls { 1.0 } else { 0.0 };
                gz[2 * i + k] = g[0] * w * (probs[2 * i + k] - onehot) / b as f64;
            }
        }
        vec![Some(gz)]
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tape;

    fn loss(z: Vec<f64>, labels: &[Label]) -> f64 {
        let tape = Tape::no_grad();
        let x = tape.constant(Tensor::new(&[labels.len(), 2], z).unwrap());
        wce_loss(&x, labels, ClassWeights::default()).unwrap().data()[0]
    }

    #[test]
    fn uniform_logits() {
        let ln2 = 2f64.ln();
        assert!((loss(vec![0.0, 0.0], &[Label::Spoof]) - ln2).abs() < 1e-15);
        assert!((loss(vec![0.0, 0.0], &[Label::Bona]) - 9.0 * ln2).abs() < 1e-14);
        let mixed = loss(vec![0.0; 4], &[Label::Spoof, Label::Bona]);
        assert!((mixed - 5.0 * ln2).abs() < 1e-14);
    }

    #[test]
    fn empty_and_mismatched() {
        let tape = Tape::no_grad();
        let x = tape.constant(Tensor::zeros(&[1, 2]));
        assert!(wce_loss(&x, &[], ClassWeights::default()).is_err());
        assert!(wce_loss(&x, &[Label::Bona, Label::Spoof], ClassWeights::default()).is_err());
    }

    #[test]
    fn extreme_logits_stay_finite() {
        let l = loss(vec![800.0, -800.0], &[Label::Spoof]);
        assert_eq!(l, 0.0);
        let l = loss(vec![800.0, -800.0], &[Label::Bona]);
        assert!((l - 9.0 * 1600.0).abs() < 1e-9);
    }
}
