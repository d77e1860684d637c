//! The dual-stream TDNN: configuration, parameter layout, forward pass and checkpoints.

pub mod checkpoint;
pub mod config;
pub mod layout;
pub mod model;

pub use checkpoint::{load_checkpoint, quantize_f32, save_checkpoint, Dtype};
pub use config::ModelConfig;
pub use layout::{count_parameters, param_specs, ParamSpec};
pub use model::{fuse_branches, DsTdnn, ForwardTrace, Model, Pass, Sparsity};
