//! Spectro-temporal graph attention network for spoofed-speech detection,
//! with the tensor, autodiff, training, audio and scoring code it runs on.

pub mod data;
pub mod encoder;
pub mod error;
pub mod fusion;
pub mod gat;
pub mod metrics;
pub mod model;
pub mod params;
pub mod pooling;
pub mod sinc;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use fusion::FusionMode;
pub use model::{ModelConfig, RawGatModel};
pub use tensor::{Grads, Padding, Tape, Tensor, Var};
