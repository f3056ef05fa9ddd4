//! Node-count projection and model-level fusion of the two branch graphs.

use std::fmt;
use std::str::FromStr;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};
use crate::params::{Dense, ParamStore};
use crate::tensor::Var;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FusionMode {
    Add,
    Mul,
    /// Feature-axis concatenation, spectral features first.
    Concat,
}

impl FusionMode {
    pub const ALL: [FusionMode; 3] = [FusionMode::Add, FusionMode::Mul, FusionMode::Concat];

    /// Feature width of the fused graph for branch width `d`.
    pub fn fused_dim(self, d: usize) -> usize {
        match self {
            FusionMode::Concat => 2 * d,
            _ => d,
        }
    }
}

impl fmt::Display for FusionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FusionMode::Add => "add",
            FusionMode::Mul => "mul",
            FusionMode::Concat => "concat",
        })
    }
}

impl FromStr for FusionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "add" => Ok(FusionMode::Add),
            "mul" => Ok(FusionMode::Mul),
            "concat" => Ok(FusionMode::Concat),
            other => Err(Error::Config(format!("unknown fusion mode `{other}` (add, mul, concat)"))),
        }
    }
}

/// Combines two `[B, N, d]` graphs.
pub fn fuse<'t>(spectral: &Var<'t>, temporal: &Var<'t>, mode: FusionMode) -> Result<Var<'t>> {
    if spectral.shape() != temporal.shape() || spectral.shape().len() != 3 {
        return dim_err(
            "fuse",
            format!("{mode} needs equal [B, N, d] operands, got {:?} and {:?}", spectral.shape(), temporal.shape()),
        );
    }
    match mode {
        FusionMode::Add => spectral.add(temporal),
        FusionMode::Mul => spectral.mul(temporal),
        FusionMode::Concat => spectral.concat_last(temporal),
    }
}

/// Affine map along the node axis: `[B, N, d] → [B, target, d]`.
#[derive(Clone, Debug)]
pub struct NodeProjection {
    pub dense: Dense,
}

impl NodeProjection {
    pub fn new(store: &mut ParamStore, name: &str, nodes: usize, target: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            dense: Dense::new(store, name, nodes, target, true, rng),
        }
    }

    pub fn forward<'t>(&self, store: &ParamStore, x: &Var<'t>) -> Result<Var<'t>> {
        let s = x.shape();
        if s.len() != 3 || s[1] != self.dense.d_in {
            return dim_err("project_nodes", format!("input {s:?} for {} nodes", self.dense.d_in));
        }
        let t = x.transpose_last2()?;
        self.dense.forward(store, &t)?.transpose_last2()
    }
}
