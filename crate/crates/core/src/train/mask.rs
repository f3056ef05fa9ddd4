//! Training-time channel masking of the front-end output.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{dim_err, Result};
use crate::tensor::{Tensor, Var};

/// Contiguous block of frequency rows set to zero, shared by a whole batch.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ChannelMask {
    pub start: usize,
    pub width: usize,
}

impl ChannelMask {
    /// Width uniform on `{0, …, limit}`, start uniform over the positions
    /// where the block fits inside `rows`.
    pub fn sample(rng: &mut ChaCha8Rng, rows: usize, limit: usize) -> Self {
        let width = rng.gen_range(0..=limit.min(rows));
        let start = rng.gen_range(0..=rows - width);
        Self { start, width }
    }

    pub fn is_empty(&self) -> bool {
        self.width == 0
    }

    /// Zeroes rows `[start, start + width)` of a `[B, 1, rows, time]` tensor.
    pub fn apply<'t>(&self, x: &Var<'t>) -> Result<Var<'t>> {
        let s = x.shape();
        if s.len() != 4 || self.start + self.width > s[2] {
            return dim_err("channel_mask", format!("mask {self:?} on {s:?}"));
        }
        if self.is_empty() {
            return Ok(x.clone());
        }
        let (rows, time) = (s[2], s[3]);
        let band = self.start * time..(self.start + self.width) * time;
        let zero_band = move |v: &mut [f64]| {
            for item in v.chunks_exact_mut(rows * time) {
                item[band.clone()].fill(0.0);
            }
        };
        let mut y = x.data().to_vec();
        zero_band(&mut y);
        x.tape().push("channel_mask", Tensor::new(s, y)?, &[x], move |g, _| {
            let mut gx = g.to_vec();
            zero_band(&mut gx);
            vec![Some(gx)]
        })
    }
}
