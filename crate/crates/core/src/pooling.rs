//! Top-k graph pooling with sigmoid gating.
//!
//! Scores `y_n = X_n · q` rank the nodes; the `max(1, floor(k·N))` best are
//! kept in their original order and scaled by `sigmoid(y_n)`, the rest are
//! dropped. Ties go to the lower index. The selection itself is a hard
//! decision and carries no gradient; `q` learns through the gate.

use rand_chacha::ChaCha8Rng;

use crate::error::{dim_err, Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::tensor::Var;

/// Number of nodes kept from `n` at ratio `k`.
pub fn retained_count(n: usize, k: f64) -> usize {
    // the epsilon absorbs representation error in products like 0.29 * 100
    (((k * n as f64) + 1e-9).floor() as usize).clamp(1, n.max(1))
}

/// Indices of the `count` highest scores, ascending.
pub fn top_k_indices(scores: &[f64], count: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order.truncate(count);
    order.sort_unstable();
    order
}

pub fn validate_ratio(k: f64) -> Result<()> {
    if k > 0.0 && k <= 1.0 {
        Ok(())
    } else {
        Err(Error::Config(format!("pooling ratio {k} outside (0, 1]")))
    }
}

/// Learnable projection vector and pooling ratio.
#[derive(Clone, Debug)]
pub struct GraphPool {
    pub q: ParamId,
    pub ratio: f64,
    dim: usize,
}

impl GraphPool {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize, ratio: f64, rng: &mut ChaCha8Rng) -> Result<Self> {
        validate_ratio(ratio)?;
        let q = store.uniform(format!("{name}.q"), &[dim, 1], dim, rng);
        Ok(Self { q, ratio, dim })
    }

    /// `[B, N, d] → [B, N', d]` plus the retained indices of each item.
    pub fn forward<'t>(&self, store: &ParamStore, x: &Var<'t>) -> Result<(Var<'t>, Vec<Vec<usize>>)> {
        let s = x.shape();
        if s.len() != 3 || s[2] != self.dim {
            return dim_err("graph_pool", format!("input {s:?} for width {}", self.dim));
        }
        let (b, n) = (s[0], s[1]);
        let q = store.var(x.tape(), self.q);
        let scores = x.dense(&q, None)?;
        let keep = retained_count(n, self.ratio);
        let indices: Vec<Vec<usize>> = scores
            .data()
            .chunks_exact(n)
            .take(b)
            .map(|row| top_k_indices(row, keep))
            .collect();
        let kept = x.gather_rows(&indices)?;
        let gate = scores.gather_rows(&indices)?.sigmoid()?;
        Ok((kept.mul(&gate)?, indices))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{Tape, Tensor};
    use rand::SeedableRng;

    #[test]
    fn table_counts() {
        assert_eq!(retained_count(23, 0.64), 14);
        assert_eq!(retained_count(29, 0.81), 23);
        assert_eq!(retained_count(12, 0.64), 7);
        assert_eq!(retained_count(1, 0.25), 1);
        assert_eq!(retained_count(100, 0.29), 29);
    }

    #[test]
    fn ties_prefer_lower_index() {
        assert_eq!(top_k_indices(&[1.0, 3.0, 3.0, 0.0], 1), vec![1]);
        assert_eq!(top_k_indices(&[2.0, 2.0, 2.0], 2), vec![0, 1]);
    }

    #[test]
    fn ratio_validation() {
        assert!(validate_ratio(0.0).is_err());
        assert!(validate_ratio(2.0).is_err());
        assert!(validate_ratio(1.0).is_ok());
    }

    #[test]
    fn full_ratio_only_gates() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let pool = GraphPool::new(&mut store, "p", 2, 1.0, &mut rng).unwrap();
        store.get_mut(pool.q).data_mut().copy_from_slice(&[1.0, 0.0]);
        let tape = Tape::no_grad();
        let x = tape.constant(Tensor::new(&[1, 3, 2], vec![0.0, 1.0, 2.0, 1.0, -1.0, 4.0]).unwrap());
        let (y, idx) = pool.forward(&store, &x).unwrap();
        assert_eq!(idx, vec![vec![0, 1, 2]]);
        let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
        let expected = [0.0, sig(0.0), 2.0 * sig(2.0), sig(2.0), -sig(-1.0), 4.0 * sig(-1.0)];
        for (a, b) in y.data().iter().zip(expected) {
            assert!((a - b).abs() < 1e-15);
        }
    }
}
