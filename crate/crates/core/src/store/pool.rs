//! Spatial pooling of unpooled `d x H x W` activation maps.

use super::format::{ActivationShard, ShardError, ShardRow};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PoolMode {
    #[default]
    Mean,
}

/// Pool a channel-major `d*H*W` map to a `d` vector.
pub fn pool_spatial(
    values: &[f32],
    feature_dim: usize,
    spatial_shape: Option<(usize, usize)>,
    mode: PoolMode,
) -> Result<Vec<f32>, ShardError> {
    let (h, w) = spatial_shape.ok_or(ShardError::MissingSpatialShape)?;
    let positions = h * w;
    if positions == 0 || values.len() != feature_dim * positions {
        return Err(ShardError::Dimension {
            expected: feature_dim * positions,
            got: values.len(),
        });
    }
    let PoolMode::Mean = mode;
    let scale = 1.0 / positions as f64;
    Ok(values
        .chunks_exact(positions)
        .map(|channel| (channel.iter().map(|&v| v as f64).sum::<f64>() * scale) as f32)
        .collect())
}

/// Pooled copy of a shard. Already-pooled shards are returned unchanged.
pub fn pool_shard(shard: &ActivationShard, mode: PoolMode) -> Result<ActivationShard, ShardError> {
    if shard.meta.spatial_shape.is_none() {
        return Ok(shard.clone());
    }
    let mut meta = shard.meta.clone();
    meta.spatial_shape = None;
    let rows = shard
        .rows
        .iter()
        .map(|r| {
            Ok(ShardRow {
                sample_id: r.sample_id.clone(),
                label: r.label,
                values: pool_spatial(&r.values, shard.meta.feature_dim, shard.meta.spatial_shape, mode)?,
            })
        })
        .collect::<Result<Vec<_>, ShardError>>()?;
    Ok(ActivationShard { meta, rows })
}
