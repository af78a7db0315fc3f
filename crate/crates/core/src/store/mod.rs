//! Activation shards: on-disk format, streaming access, pooling, dataset
//! statistics and a synthetic generator.

pub mod format;
pub mod pool;
pub mod source;
pub mod stats;
pub mod synth;

pub use format::{
    labels_sidecar_path, read_labels_sidecar, read_shard, read_shard_from, write_labels_sidecar,
    write_shard, write_shard_to, ActivationShard, DType, PromptMode, ShardError, ShardMeta,
    ShardReader, ShardRow, ShardWriter,
};
pub use pool::{pool_shard, pool_spatial, PoolMode};
pub use source::{batched, PooledRow, Prefetch, RowIter, RowSource};
pub use stats::{compute_stats, DatasetStats, StatsAccumulator};
pub use synth::{synth_generate, Dictionary, SynthData, SynthSpec};
