use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::FusionMode;
use crate::pooling::validate_ratio;
use crate::sinc::{FRONTEND_POOL, KERNEL_LENGTH, NUM_FILTERS, SAMPLE_RATE};

/// Input length used throughout: about four seconds at 16 kHz.
pub const SEGMENT_LENGTH: usize = 64_600;

/// Every architectural hyperparameter of the network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub segment_length: usize,
    pub sample_rate: u32,
    pub sinc_filters: usize,
    pub sinc_kernel: usize,
    /// Output channels of each residual stack.
    pub encoder_channels: Vec<usize>,
    /// Number of blocks in each residual stack.
    pub encoder_blocks: Vec<usize>,
    /// One encoder feeding both branches instead of one per branch.
    pub shared_encoder: bool,
    /// Output width of the spectral and temporal GAT layers.
    pub gat_dim: usize,
    /// Output width of the spectro-temporal GAT layer.
    pub st_gat_dim: usize,
    /// Node count both branches are projected to before fusion.
    pub fused_nodes: usize,
    pub fusion: FusionMode,
    pub k_spec: f64,
    pub k_temp: f64,
    pub k_st: f64,
    pub use_spectral: bool,
    pub use_temporal: bool,
    pub use_pooling: bool,
    /// Largest number of front-end rows zeroed by channel masking.
    pub mask_limit: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            segment_length: SEGMENT_LENGTH,
            sample_rate: SAMPLE_RATE,
            sinc_filters: NUM_FILTERS,
            sinc_kernel: KERNEL_LENGTH,
            encoder_channels: vec![32, 64],
            encoder_blocks: vec![2, 4],
            shared_encoder: false,
            gat_dim: 32,
            st_gat_dim: 16,
            fused_nodes: 12,
            fusion: FusionMode::Mul,
            k_spec: 0.64,
            k_temp: 0.81,
            k_st: 0.64,
            use_spectral: true,
            use_temporal: true,
            use_pooling: true,
            mask_limit: 14,
            seed: 1234,
        }
    }
}

impl ModelConfig {
    /// Reduced network for CPU experiments on short synthetic segments:
    /// 0.125 s input, one narrow residual block per stage and small graph
    /// widths. The order of layers is unchanged.
    pub fn desk() -> Self {
        Self {
            segment_length: 2_000,
            encoder_channels: vec![4, 8],
            encoder_blocks: vec![1, 1],
            gat_dim: 6,
            st_gat_dim: 4,
            ..Self::default()
        }
    }

    /// Whether the layer plan equals the published full-size network.
    pub fn is_reference_architecture(&self) -> bool {
        let d = Self::default();
        self.segment_length == d.segment_length
            && self.sample_rate == d.sample_rate
            && self.sinc_filters == d.sinc_filters
            && self.sinc_kernel == d.sinc_kernel
            && self.encoder_channels == d.encoder_channels
            && self.encoder_blocks == d.encoder_blocks
            && self.gat_dim == d.gat_dim
            && self.st_gat_dim == d.st_gat_dim
            && self.fused_nodes == d.fused_nodes
            && self.k_spec == d.k_spec
            && self.k_temp == d.k_temp
            && self.k_st == d.k_st
    }

    pub fn both_branches(&self) -> bool {
        self.use_spectral && self.use_temporal
    }

    /// Frequency rows of the pooled front-end output.
    pub fn frontend_rows(&self) -> usize {
        self.sinc_filters / FRONTEND_POOL.0
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.use_spectral || self.use_temporal) {
            return bad("at least one of use_spectral / use_temporal must be enabled".into());
        }
        for (name, k) in [("k_spec", self.k_spec), ("k_temp", self.k_temp), ("k_st", self.k_st)] {
            validate_ratio(k).map_err(|_| Error::Config(format!("{name} = {k} outside (0, 1]")))?;
        }
        if self.encoder_channels.is_empty() || self.encoder_channels.len() != self.encoder_blocks.len() {
            return bad(format!(
                "encoder_channels {:?} and encoder_blocks {:?} must be non-empty and of equal length",
                self.encoder_channels, self.encoder_blocks
            ));
        }
        if self.encoder_channels.contains(&0) || self.encoder_blocks.contains(&0) {
            return bad("encoder channel and block counts must be positive".into());
        }
        if self.sinc_kernel.is_multiple_of(2) {
            return bad(format!("sinc_kernel must be odd, got {}", self.sinc_kernel));
        }
        if self.sinc_filters < FRONTEND_POOL.0 {
            return bad(format!("sinc_filters must be at least {}", FRONTEND_POOL.0));
        }
        if self.mask_limit > self.frontend_rows() {
            return bad(format!(
                "mask_limit {} exceeds the {} front-end rows",
                self.mask_limit,
                self.frontend_rows()
            ));
        }
        if self.fused_nodes == 0 || self.gat_dim == 0 || self.st_gat_dim == 0 {
            return bad("fused_nodes, gat_dim and st_gat_dim must be positive".into());
        }
        super::shape::ShapePlan::derive(self).map(|_| ())
    }
}
