//! Global-aware filter layers and the dual-stream TDNN speaker embedding network.

pub mod analysis;
pub mod autograd;
pub mod bench;
pub mod dynamic;
pub mod error;
pub mod eval;
pub mod frontend;
pub mod network;
pub mod params;
pub mod spectral;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use tensor::Tensor;

/// Whether a forward pass is part of training (batch statistics, sparse masks)
/// or inference (frozen statistics, no masks).
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Train,
    Eval,
}
