//! Loss, optimiser, channel masking and the epoch loop.

pub mod adam;
pub mod loss;
pub mod mask;
pub mod trainer;

pub use adam::{AdamConfig, AdamState};
pub use loss::{wce_loss, ClassWeights};
pub use mask::ChannelMask;
pub use trainer::{evaluate_loss, train, train_step, EpochStats, PreparedSet, TrainConfig, TrainOutputs, TrainReport};
