//! k-sparse autoencoders over diffusion-model activations.
//!
//! - [`store`]: the `ACTS` shard format, streaming readers, pooling, stats
//!   and a synthetic sparse-dictionary generator.
//! - [`model`]: TopK autoencoder forward/backward, Adam, decoder constraint.
//! - [`train`]: streaming trainer with checkpoints and metrics.
//! - [`analysis`]: top-activating samples, label purity, dictionary
//!   recovery, PCA feature maps, gallery manifests.
//! - [`cli`]: the `ksae` command line.

pub mod kv;
pub mod model;
pub mod real;
pub mod store;
pub mod train;
pub mod analysis;
pub mod cli;

pub use real::{Precision, Real};
