//! Minimal differentiable-network stack for depth-image policies.
//!
//! Networks are described by a [`NetworkSpec`]: an image trunk (conv /
//! batchnorm / pooling layers), an implicit flatten, concatenation of an
//! auxiliary feature vector, and a fully-connected head. Parameters live in a
//! flat [`ParamSet`] together with Adam moment state, so whole networks can be
//! snapshot-copied, soft-updated and checkpointed as plain value types.
//!
//! Everything runs on the CPU in `f64`; a reduced-precision `f32` forward pass
//! is available for inference-only callers. All operations are deterministic:
//! fixed iteration order, no thread-dependent reductions.

mod checkpoint;
mod eval32;
mod layer;
mod net;
mod params;
mod tensor;

pub use checkpoint::{
    load_params, read_paramset, save_params, spec_hash, write_paramset, CHECKPOINT_VERSION,
};
pub use eval32::Params32;
pub use layer::LayerSpec;
pub use net::{ForwardCache, Grads, Mode, Network, NetworkSpec, Shape};
pub use params::{adam_step, AdamHyper, ParamSet};
pub use tensor::Tensor;

use thiserror::Error;

/// Errors produced by network construction, execution and checkpoint I/O.
#[derive(Debug, Error)]
pub enum NnError {
    #[error("invalid network spec: {0}")]
    InvalidSpec(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite value produced in {0}")]
    NonFinite(String),
    #[error("backward requires a cache from a train-mode forward")]
    MissingCache,
    #[error("checkpoint io: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad checkpoint: {0}")]
    BadCheckpoint(String),
    #[error("spec hash mismatch: checkpoint has {found:#018x}, expected {expected:#018x}")]
    SpecHashMismatch { found: u64, expected: u64 },
}

/// Stable 64-bit FNV-1a, used to fingerprint specs inside checkpoints.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}
