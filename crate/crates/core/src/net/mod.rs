//! Residual policy-value network: forward pass, loss, backpropagation,
//! SGD with momentum and a checkpoint container.
//!
//! Activations are laid out channel-major as `[channel][sample * 64 + square]`
//! so every convolution is a single GEMM over the whole batch.

mod checkpoint;
mod layers;
mod model;
mod optim;
mod params;
mod scalar;

pub use checkpoint::{
    hash_bytes, load_checkpoint, load_checkpoint_expecting, save_checkpoint, Checkpoint, Metadata, CHECKPOINT_VERSION,
};
pub use model::{
    backward, batch_loss, dense_batch, forward, forward_planes, forward_train, loss, sample_loss, BatchStats,
    Gradients, LabelKind, Prediction, Trace, TrainSample, TrainTarget, LOG_FLOOR,
};
pub use optim::{learning_rate_for_generation, LrSchedule, Sgd, DEFAULT_MOMENTUM};
pub use params::{ConvBn, Dense, NetConfig, NetParams, ResBlock, TensorKind, TensorMut, TensorRef};
pub use scalar::Scalar;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NetError {
    #[error("invalid network config: {0}")]
    InvalidConfig(String),
    #[error("input shape mismatch: expected a multiple of {expected} values, got {found}")]
    Shape { expected: usize, found: usize },
    #[error("checkpoint version {found} is not supported (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("checkpoint is truncated")]
    Truncated,
    #[error("not a checkpoint (bad magic)")]
    BadMagic,
    #[error("checkpoint manifest mismatch: {0}")]
    Manifest(String),
    #[error("checkpoint is malformed: {0}")]
    Malformed(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
