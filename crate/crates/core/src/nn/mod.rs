//! Small deterministic engine for 1D convolutional networks.
//!
//! Tensors are `(batch, channels, length)` in 64-bit floats. A [`Graph`]
//! records ops as they run and differentiates them in reverse. Parameters
//! live in a [`ParamStore`] and are copied into the graph per pass, so
//! inference only needs shared access to the model.

mod graph;
mod kernels;
mod layers;
mod optim;
mod params;
mod tensor;
mod train;

pub use graph::{apply_stat_updates, Gradients, Graph, L1Reduction, NodeId, StatUpdate, BCE_CLAMP, BN_EPS, DICE_SMOOTH};
pub use layers::{BatchNorm, ConvUnit, Pointwise, SepConv};
pub use optim::{AdamW, AdamWConfig};
pub use params::{Checkpoint, Param, ParamId, ParamStore, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use tensor::Tensor1D;
pub use train::{evaluate_loss, train_loop, train_loop_with, EarlyStopping, EpochRecord, History, StopDecision, TrainConfig, Trainable, BN_MOMENTUM};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite value produced by {0}")]
    NonFinite(String),
    #[error("backward called on a node that was not recorded")]
    NotRecorded,
    #[error("loss must be a scalar, got shape {0:?}")]
    NonScalarLoss((usize, usize, usize)),
    #[error("training diverged at epoch {epoch}, batch {batch}: loss {loss}")]
    Diverged { epoch: usize, batch: usize, loss: f64 },
    #[error("training and validation data must be non-empty")]
    EmptyData,
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

#[cfg(test)]
mod gradcheck;
