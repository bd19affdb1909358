//! Minimal deterministic neural-network engine: tensors, layer
//! forward/backward passes, losses, Glorot initialization, Adam, and
//! declarative builders for the 1D AlexNet and ResNet variants.
//!
//! Training runs at f32; the finite-difference gradient oracle instantiates
//! the same layers at f64. Given a seed, everything here is bit-deterministic
//! regardless of thread count: parallel loops only split disjoint output
//! regions and never reorder a single element's accumulation.

mod adam;
mod checkpoint;
mod init;
mod layers;
mod loss;
mod model;
mod residual;
mod tensor;

pub use adam::{adam_step_slice, AdamHyper, AdamState};
pub use checkpoint::{CheckpointMeta, ModelCheckpoint, CHECKPOINT_MAGIC};
pub use init::{glorot_init, glorot_with_rng};
pub use layers::{
    BatchNorm1d, Conv1d, Dense, Dropout, ForwardCtx, GlobalAvgPool, Layer, MaxPool1d, Mode,
    Padding, Relu, BATCHNORM_EPS, BATCHNORM_MOMENTUM,
};
pub use loss::{mse_loss, softmax_cross_entropy, softmax_probs};
pub use model::{build_architecture, mix_seed, ArchitectureConfig, HeadSpec, LayerSpec, Model, Profile};
pub use residual::{BlockKind, ResidualBlock, BOTTLENECK_EXPANSION};
pub use tensor::{scalar, Scalar, Tensor};
