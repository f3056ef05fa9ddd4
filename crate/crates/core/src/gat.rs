//! Graph attention over a complete graph with self-loops.
//!
//! For node features `h` (`N × d`) the layer computes
//!
//! ```text
//! α[u,n] = softmax_u( W_map · (h_n ⊙ h_u) )        over all u, including n
//! m_n    = Σ_u α[u,n] h_u
//! o_n    = SeLU(BN(W_att m_n + W_res h_n))          o_n ∈ R^{d'}, d' < d
//! ```
//!
//! Batch norm normalises each of the `d'` output features with nodes (and
//! batch items) as the statistics population. The vectorised path stores the
//! attention matrix row-major as `[target n, contributor u]`, so every row
//! of the softmax is one target's normalised distribution.

use rand_chacha::ChaCha8Rng;

use crate::error::{dim_err, Error, Result};
use crate::params::{BatchNorm, Dense, ParamId, ParamStore};
use crate::tensor::{Tape, Tensor, Var};

/// Node-feature matrix of a complete graph. Edges are implicit.
#[derive(Clone, Debug, PartialEq)]
pub struct Graph {
    features: Tensor,
}

impl Graph {
    pub fn new(features: Tensor) -> Result<Self> {
        if features.rank() != 2 {
            return dim_err("graph", format!("node features must be N×d, got {:?}", features.shape()));
        }
        Ok(Self { features })
    }

    pub fn num_nodes(&self) -> usize {
        self.features.shape()[0]
    }

    pub fn dim(&self) -> usize {
        self.features.shape()[1]
    }

    pub fn features(&self) -> &Tensor {
        &self.features
    }

    pub fn node(&self, n: usize) -> &[f64] {
        let d = self.dim();
        &self.features.data()[n * d..(n + 1) * d]
    }

    pub fn into_features(self) -> Tensor {
        self.features
    }

    /// Batch of one, `[1, N, d]`.
    pub fn batched(&self) -> Tensor {
        self.features
            .clone()
            .reshape(&[1, self.num_nodes(), self.dim()])
            .expect("same element count")
    }
}

/// Attention weights for one graph, returned as `[u, n]`: entry `(u, n)` is
/// the weight of contributor `u` for target `n`, so each column sums to 1.
pub fn attention_weights(h: &Graph, w_map: &[f64]) -> Result<Tensor> {
    let (n, d) = (h.num_nodes(), h.dim());
    if w_map.len() != d {
        return dim_err("attention_weights", format!("W_map has {} entries for d = {d}", w_map.len()));
    }
    if !h.features().is_finite() || w_map.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("attention_weights input".into()));
    }
    let mut out = vec![0.0; n * n];
    for target in 0..n {
        let ht = h.node(target);
        let logits: Vec<f64> = (0..n)
            .map(|u| {
                h.node(u)
                    .iter()
                    .zip(ht)
                    .zip(w_map)
                    .map(|((a, b), w)| w * a * b)
                    .sum()
            })
            .collect();
        let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = logits.iter().map(|l| (l - mx).exp()).sum();
        for (u, l) in logits.iter().enumerate() {
            out[u * n + target] = (l - mx).exp() / z;
        }
    }
    Tensor::new(&[n, n], out)
}

/// One graph attention layer.
#[derive(Clone, Debug)]
pub struct GatLayer {
    pub w_map: ParamId,
    pub w_att: Dense,
    pub w_res: Dense,
    pub bn: BatchNorm,
    d_in: usize,
    d_out: usize,
}

impl GatLayer {
    pub fn new(store: &mut ParamStore, name: &str, d_in: usize, d_out: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        if d_out == 0 || d_in == 0 {
            return Err(Error::Config(format!("{name}: widths must be positive, got {d_in} -> {d_out}")));
        }
        let w_map = store.uniform(format!("{name}.w_map"), &[d_in], d_in, rng);
        let w_att = Dense::new(store, &format!("{name}.w_att"), d_in, d_out, true, rng);
        let w_res = Dense::new(store, &format!("{name}.w_res"), d_in, d_out, true, rng);
        let bn = BatchNorm::new(store, &format!("{name}.bn"), d_out, 2);
        Ok(Self {
            w_map,
            w_att,
            w_res,
            bn,
            d_in,
            d_out,
        })
    }

    pub fn d_in(&self) -> usize {
        self.d_in
    }

    pub fn d_out(&self) -> usize {
        self.d_out
    }

    /// `[B, N, d] → [B, N, d']`.
    pub fn forward<'t>(&self, store: &mut ParamStore, h: &Var<'t>, training: bool) -> Result<Var<'t>> {
        let s = h.shape();
        if s.len() != 3 || s[2] != self.d_in {
            return dim_err("gat", format!("input {s:?} for width {}", self.d_in));
        }
        let tape = h.tape();
        let w_map = store.var(tape, self.w_map).reshape(&[1, 1, self.d_in])?;
        let logits = h.mul(&w_map)?.bmm(&h.transpose_last2()?)?;
        let attn = logits.softmax_last()?;
        let m = attn.bmm(h)?;
        let z = self.w_att.forward(store, &m)?.add(&self.w_res.forward(store, h)?)?;
        self.bn.forward(store, &z, training)?.selu()
    }

    /// Applies the layer to a single graph.
    pub fn apply(&self, store: &mut ParamStore, g: &Graph, training: bool) -> Result<Graph> {
        let tape = Tape::no_grad();
        let h = tape.constant(g.batched());
        let o = self.forward(store, &h, training)?;
        Graph::new(o.to_tensor().reshape(&[g.num_nodes(), self.d_out])?)
    }
}
