//! Minimal tensor and network substrate: layer weights, forward inference,
//! the squared-weight forward pass, Frobenius and spectral norms, parameter
//! perturbation and checkpoints.
//!
//! Networks are immutable values once built; every operation here is a pure
//! function of its inputs.

mod checkpoint;
mod layer;
mod network;
mod spectral;
mod tensor;

pub use checkpoint::{
    load_checkpoint, save_checkpoint, Checkpoint, CheckpointMeta, CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION,
};
pub use layer::{Layer, LayerKind, LayerSpec};
pub use network::{perturb_flat, ForwardScratch, Network, PerturbMode};
pub use spectral::{
    materialize_linear_map, spectral_norm, spectral_norm_with, PowerIterOptions,
    DEFAULT_MATERIALIZE_CAP,
};
pub use tensor::{frobenius_norm_sq, Tensor};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    Dimension {
        context: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("invalid network: {0}")]
    InvalidNetwork(String),
    #[error("non-finite value at index {index}")]
    NonFinite { index: usize },
    #[error("power iteration did not converge after {iterations} iterations (estimate {estimate})")]
    NonConvergence { estimate: f64, iterations: usize },
    #[error("linear map of size {size} exceeds materialization cap {cap}")]
    SizeCap { size: usize, cap: usize },
    #[error("checkpoint parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },
    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u32),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
