//! The k-sparse autoencoder.
//!
//! ```text
//! z     = TopK(W_enc (x - b_pre) + b_enc)
//! x_hat = W_dec z + b_pre
//! loss  = |x - x_hat|^2 / d
//! ```
//!
//! Decoder columns are kept at unit L2 norm after every optimizer update.

pub mod adam;
pub mod backward;
pub mod forward;
pub mod params;
pub mod topk;

pub use adam::{adam_step, AdamConfig, AdamState, StepReport};
pub use backward::{backward, backward_into, BatchResult, KsaeGrads};
pub use forward::{decode, decode_dense, encode, forward, loss, Encoding, ForwardTrace, LossNorm};
pub use params::{init_params, renorm_decoder, KsaeParams};
pub use topk::{topk, SparseCode};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ModelError {
    #[error("{what}: expected length {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("k = {k} outside [1, {n}]")]
    InvalidK { k: usize, n: usize },
    #[error("invalid dimensions: {0}")]
    InvalidDims(String),
    #[error("non-finite activation at batch index {index}")]
    NonFinite { index: usize },
    #[error("non-finite gradient in {tensor}")]
    NonFiniteGradient { tensor: &'static str },
    #[error("empty batch")]
    EmptyBatch,
    #[error("optimizer state does not match parameter shapes")]
    StateShape,
}
