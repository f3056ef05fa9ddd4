//! Named parameter storage and the layer wrappers built on it.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{BatchNormConfig, Grads, Padding, RunningStats, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamKind {
    /// Updated by the optimiser.
    Trainable,
    /// Non-trainable state such as batch-norm running statistics.
    Buffer,
}

#[derive(Clone, Debug)]
pub struct ParamEntry {
    pub name: String,
    pub kind: ParamKind,
    pub tensor: Tensor,
}

/// Ordered collection of every tensor a model owns.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    entries: Vec<ParamEntry>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, kind: ParamKind, mut tensor: Tensor) -> ParamId {
        tensor.set_requires_grad(kind == ParamKind::Trainable);
        self.entries.push(ParamEntry {
            name: name.into(),
            kind,
            tensor,
        });
        ParamId(self.entries.len() - 1)
    }

    /// Trainable tensor drawn from `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
    pub fn uniform(&mut self, name: impl Into<String>, shape: &[usize], fan_in: usize, rng: &mut ChaCha8Rng) -> ParamId {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let t = Tensor::from_fn(shape, |_| rng.gen_range(-bound..bound));
        self.insert(name, ParamKind::Trainable, t)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut [ParamEntry] {
        &mut self.entries
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].tensor
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].tensor
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|e| e.name == name).map(ParamId)
    }

    /// Number of trainable scalars.
    pub fn trainable_count(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| e.kind == ParamKind::Trainable)
            .map(|e| e.tensor.numel())
            .sum()
    }

    /// Places a parameter on the tape; its gradient can later be collected
    /// with [`ParamStore::absorb`].
    pub fn var<'t>(&self, tape: &'t Tape, id: ParamId) -> Var<'t> {
        tape.bound_leaf(self.entries[id.0].tensor.clone(), id.0)
    }

    /// Accumulates the gradients of every parameter placed on `tape`.
    pub fn absorb(&mut self, tape: &Tape, grads: &Grads) -> Result<()> {
        for (node, key) in tape.bindings() {
            if let Some(g) = grads.by_id(node) {
                self.entries[key].tensor.accumulate_grad(g)?;
            }
        }
        Ok(())
    }

    pub fn zero_grads(&mut self) {
        self.entries.iter_mut().for_each(|e| e.tensor.zero_grad());
    }

    pub fn running(&mut self, mean: ParamId, var: ParamId) -> RunningStats<'_> {
        assert!(mean.0 < var.0, "running mean must precede variance");
        let (lo, hi) = self.entries.split_at_mut(var.0);
        RunningStats {
            mean: lo[mean.0].tensor.data_mut(),
            var: hi[0].tensor.data_mut(),
        }
    }

    /// Overwrites values from another store with identical names and shapes.
    pub fn copy_values_from(&mut self, other: &ParamStore) -> Result<()> {
        if other.entries.len() != self.entries.len() {
            return Err(Error::Contract(format!(
                "parameter count mismatch: {} vs {}",
                self.entries.len(),
                other.entries.len()
            )));
        }
        for (dst, src) in self.entries.iter_mut().zip(&other.entries) {
            if dst.name != src.name || dst.tensor.shape() != src.tensor.shape() {
                return Err(Error::Contract(format!("parameter `{}` does not match `{}`", dst.name, src.name)));
            }
            dst.tensor.data_mut().copy_from_slice(src.tensor.data());
        }
        Ok(())
    }
}

/// Affine map along the trailing axis.
#[derive(Clone, Copy, Debug)]
pub struct Dense {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub d_in: usize,
    pub d_out: usize,
}

impl Dense {
    pub fn new(store: &mut ParamStore, name: &str, d_in: usize, d_out: usize, bias: bool, rng: &mut ChaCha8Rng) -> Self {
        let weight = store.uniform(format!("{name}.weight"), &[d_in, d_out], d_in, rng);
        let bias = bias.then(|| store.uniform(format!("{name}.bias"), &[d_out], d_in, rng));
        Self {
            weight,
            bias,
            d_in,
            d_out,
        }
    }

    pub fn forward<'t>(&self, store: &ParamStore, x: &Var<'t>) -> Result<Var<'t>> {
        let tape = x.tape();
        let w = store.var(tape, self.weight);
        let b = self.bias.map(|b| store.var(tape, b));
        x.dense(&w, b.as_ref())
    }
}

/// 2D convolution with bias.
#[derive(Clone, Copy, Debug)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub padding: Padding,
}

impl Conv2d {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: (usize, usize),
        padding: Padding,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let fan_in = c_in * kernel.0 * kernel.1;
        let weight = store.uniform(format!("{name}.weight"), &[c_out, c_in, kernel.0, kernel.1], fan_in, rng);
        let bias = store.uniform(format!("{name}.bias"), &[c_out], fan_in, rng);
        Self { weight, bias, padding }
    }

    pub fn forward<'t>(&self, store: &ParamStore, x: &Var<'t>) -> Result<Var<'t>> {
        let tape = x.tape();
        let w = store.var(tape, self.weight);
        let b = store.var(tape, self.bias);
        x.conv2d(&w, Some(&b), 1, self.padding)
    }
}

/// Batch normalisation with learnable scale/shift and running statistics.
#[derive(Clone, Copy, Debug)]
pub struct BatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub mean: ParamId,
    pub var: ParamId,
    pub axis: usize,
}

impl BatchNorm {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize, axis: usize) -> Self {
        let gamma = store.insert(format!("{name}.gamma"), ParamKind::Trainable, Tensor::full(&[channels], 1.0));
        let beta = store.insert(format!("{name}.beta"), ParamKind::Trainable, Tensor::zeros(&[channels]));
        let mean = store.insert(format!("{name}.running_mean"), ParamKind::Buffer, Tensor::zeros(&[channels]));
        let var = store.insert(format!("{name}.running_var"), ParamKind::Buffer, Tensor::full(&[channels], 1.0));
        Self {
            gamma,
            beta,
            mean,
            var,
            axis,
        }
    }

    pub fn forward<'t>(&self, store: &mut ParamStore, x: &Var<'t>, training: bool) -> Result<Var<'t>> {
        let tape = x.tape();
        let g = store.var(tape, self.gamma);
        let b = store.var(tape, self.beta);
        let running = store.running(self.mean, self.var);
        x.batchnorm(&g, &b, running, self.axis, training, BatchNormConfig::default())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn dense_two_to_three_has_nine_parameters() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        Dense::new(&mut store, "fc", 2, 3, true, &mut rng);
        assert_eq!(store.trainable_count(), 9);
    }

    #[test]
    fn buffers_are_not_counted() {
        let mut store = ParamStore::new();
        BatchNorm::new(&mut store, "bn", 4, 1);
        assert_eq!(store.trainable_count(), 8);
        assert_eq!(store.len(), 4);
    }

    #[test]
    fn gradients_reach_the_store() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let fc = Dense::new(&mut store, "fc", 3, 1, true, &mut rng);
        let tape = Tape::new();
        let x = tape.constant(Tensor::new(&[2, 3], vec![1.0, 2.0, 3.0, -1.0, 0.0, 1.0]).unwrap());
        let y = fc.forward(&store, &x).unwrap().sum().unwrap();
        let grads = tape.backward(&y).unwrap();
        store.absorb(&tape, &grads).unwrap();
        assert_eq!(store.get(fc.weight).grad().unwrap(), &[0.0, 2.0, 4.0]);
        assert_eq!(store.get(fc.bias.unwrap()).grad().unwrap(), &[2.0]);
    }
}
