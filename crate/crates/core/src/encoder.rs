//! 2D residual encoder producing the `(channels, freq, time)` feature map.
//!
//! Blocks are pre-activation: `BN → SeLU → Conv(2,3) → BN → SeLU → Conv(2,3)`,
//! the skip path (a 1×1 convolution when the channel count changes) is added
//! to the main path, and a `(1, 3)` max-pool closes the block. Convolutions
//! use same padding, so only the pool changes the spatial extent: frequency
//! is preserved and time goes `T → floor(T / 3)` per block.

use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::params::{BatchNorm, Conv2d, ParamStore};
use crate::tensor::{Padding, Var};

pub const RES_KERNEL: (usize, usize) = (2, 3);
pub const RES_POOL: (usize, usize) = (1, 3);

#[derive(Clone, Debug)]
pub struct ResBlock {
    pre_bn: BatchNorm,
    conv1: Conv2d,
    mid_bn: BatchNorm,
    conv2: Conv2d,
    skip: Option<Conv2d>,
    pub c_in: usize,
    pub c_out: usize,
}

impl ResBlock {
    pub fn new(store: &mut ParamStore, name: &str, c_in: usize, c_out: usize, rng: &mut ChaCha8Rng) -> Self {
        let pre_bn = BatchNorm::new(store, &format!("{name}.bn1"), c_in, 1);
        let conv1 = Conv2d::new(store, &format!("{name}.conv1"), c_in, c_out, RES_KERNEL, Padding::Same, rng);
        let mid_bn = BatchNorm::new(store, &format!("{name}.bn2"), c_out, 1);
        let conv2 = Conv2d::new(store, &format!("{name}.conv2"), c_out, c_out, RES_KERNEL, Padding::Same, rng);
        let skip = (c_in != c_out)
            .then(|| Conv2d::new(store, &format!("{name}.skip"), c_in, c_out, (1, 1), Padding::Valid, rng));
        Self {
            pre_bn,
            conv1,
            mid_bn,
            conv2,
            skip,
            c_in,
            c_out,
        }
    }

    pub fn forward<'t>(&self, store: &mut ParamStore, x: &Var<'t>, training: bool) -> Result<Var<'t>> {
        let h = self.pre_bn.forward(store, x, training)?.selu()?;
        let h = self.conv1.forward(store, &h)?;
        let h = self.mid_bn.forward(store, &h, training)?.selu()?;
        let h = self.conv2.forward(store, &h)?;
        let skip = match &self.skip {
            Some(proj) => proj.forward(store, x)?,
            None => x.clone(),
        };
        h.add(&skip)?.maxpool2d(RES_POOL)
    }

    /// Weight and bias ids of both main-path convolutions.
    pub fn main_path_params(&self) -> [crate::params::ParamId; 4] {
        [self.conv1.weight, self.conv1.bias, self.conv2.weight, self.conv2.bias]
    }

    pub fn first_conv(&self) -> &Conv2d {
        &self.conv1
    }
}

/// Stacks of residual blocks; every block in stack `i` has `channels[i]`
/// output channels.
#[derive(Clone, Debug)]
pub struct ResidualEncoder {
    stacks: Vec<Vec<ResBlock>>,
}

impl ResidualEncoder {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_channels: usize,
        channels: &[usize],
        blocks: &[usize],
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let mut c_in = in_channels;
        let mut stacks = Vec::with_capacity(channels.len());
        for (s, (&c, &n)) in channels.iter().zip(blocks).enumerate() {
            let stack = (0..n)
                .map(|i| {
                    let block = ResBlock::new(store, &format!("{name}.stack{s}.block{i}"), c_in, c, rng);
                    c_in = c;
                    block
                })
                .collect();
            stacks.push(stack);
        }
        Self { stacks }
    }

    pub fn stacks(&self) -> &[Vec<ResBlock>] {
        &self.stacks
    }

    pub fn blocks(&self) -> impl Iterator<Item = &ResBlock> {
        self.stacks.iter().flatten()
    }

    pub fn out_channels(&self) -> usize {
        self.blocks().last().map(|b| b.c_out).unwrap_or(0)
    }

    /// Runs every block; `on_stack` sees each stack's output.
    pub fn forward<'t>(
        &self,
        store: &mut ParamStore,
        x: &Var<'t>,
        training: bool,
        mut on_stack: impl FnMut(usize, &Var<'t>) -> Result<()>,
    ) -> Result<Var<'t>> {
        let mut h = x.clone();
        for (s, stack) in self.stacks.iter().enumerate() {
            for block in stack {
                h = block.forward(store, &h, training)?;
            }
            on_stack(s, &h)?;
        }
        Ok(h)
    }
}

/// Time extent after `blocks` residual blocks.
pub fn time_after_blocks(mut t: usize, blocks: usize) -> usize {
    for _ in 0..blocks {
        t /= RES_POOL.1;
    }
    t
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{Tape, Tensor};
    use rand::{Rng, SeedableRng};

    #[test]
    fn floor_chain_matches_table() {
        let chain: Vec<usize> = (0..=6).map(|b| time_after_blocks(21490, b)).collect();
        assert_eq!(chain, vec![21490, 7163, 2387, 795, 265, 88, 29]);
    }

    fn small_encoder(store: &mut ParamStore) -> ResidualEncoder {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        ResidualEncoder::new(store, "enc", 1, &[4, 6], &[1, 2], &mut rng)
    }

    #[test]
    fn shapes_follow_pooling() {
        let mut store = ParamStore::new();
        let enc = small_encoder(&mut store);
        let tape = Tape::no_grad();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = tape.constant(Tensor::from_fn(&[2, 1, 5, 60], |_| rng.gen_range(-1.0..1.0)));
        let mut seen = Vec::new();
        let y = enc
            .forward(&mut store, &x, true, |s, v| {
                seen.push((s, v.shape().to_vec()));
                Ok(())
            })
            .unwrap();
        assert_eq!(seen, vec![(0, vec![2, 4, 5, 20]), (1, vec![2, 6, 5, 2])]);
        assert_eq!(y.shape(), &[2, 6, 5, 2]);
    }

    #[test]
    fn zero_input_gives_time_constant_field() {
        let mut store = ParamStore::new();
        let enc = small_encoder(&mut store);
        let tape = Tape::no_grad();
        let x = tape.constant(Tensor::zeros(&[1, 1, 5, 60]));
        let y = enc.forward(&mut store, &x, true, |_, _| Ok(())).unwrap();
        let [_, c, f, t] = <[usize; 4]>::try_from(y.shape()).unwrap();
        for ch in 0..c {
            for fr in 0..f {
                let row = &y.data()[(ch * f + fr) * t..(ch * f + fr + 1) * t];
                assert!(row.iter().all(|&v| v == row[0]), "{row:?}");
            }
        }
    }

    #[test]
    fn zeroed_convs_leave_pooled_skip() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let block = ResBlock::new(&mut store, "b", 3, 3, &mut rng);
        for id in block.main_path_params() {
            store.get_mut(id).data_mut().fill(0.0);
        }
        let tape = Tape::no_grad();
        let x = tape.constant(Tensor::from_fn(&[1, 3, 4, 9], |_| rng.gen_range(-2.0..2.0)));
        let y = block.forward(&mut store, &x, true).unwrap();
        let expected = x.maxpool2d(RES_POOL).unwrap();
        assert_eq!(y.data(), expected.data());
    }

    #[test]
    fn first_conv_receives_gradient() {
        let mut store = ParamStore::new();
        let enc = small_encoder(&mut store);
        let tape = Tape::new();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = tape.constant(Tensor::from_fn(&[2, 1, 5, 60], |_| rng.gen_range(-1.0..1.0)));
        let y = enc.forward(&mut store, &x, true, |_, _| Ok(())).unwrap();
        let w = tape.constant(Tensor::from_fn(y.shape(), |_| rng.gen_range(-1.0..1.0)));
        let loss = y.mul(&w).unwrap().sum().unwrap();
        let grads = tape.backward(&loss).unwrap();
        store.absorb(&tape, &grads).unwrap();
        let first = enc.blocks().next().unwrap().first_conv().weight;
        let norm: f64 = store.get(first).grad().unwrap().iter().map(|g| g * g).sum();
        assert!(norm > 0.0);
    }
}
