//! Per-dimension dataset mean and population variance.

use super::format::{ActivationShard, ShardError};
use super::pool::{pool_spatial, PoolMode};

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetStats {
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
    pub row_count: u64,
}

impl DatasetStats {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn total_variance(&self) -> f64 {
        self.variance.iter().sum()
    }
}

/// Welford single-pass accumulator; `merge` combines partial results.
#[derive(Debug, Clone)]
pub struct StatsAccumulator {
    count: u64,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl StatsAccumulator {
    pub fn new(dim: usize) -> Self {
        Self {
            count: 0,
            mean: vec![0.0; dim],
            m2: vec![0.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn push(&mut self, row: &[f32]) -> Result<(), ShardError> {
        if row.len() != self.dim() {
            return Err(ShardError::Dimension {
                expected: self.dim(),
                got: row.len(),
            });
        }
        self.count += 1;
        let n = self.count as f64;
        for ((m, s), &x) in self.mean.iter_mut().zip(self.m2.iter_mut()).zip(row) {
            let x = x as f64;
            let delta = x - *m;
            *m += delta / n;
            *s += delta * (x - *m);
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &StatsAccumulator) -> Result<(), ShardError> {
        if other.dim() != self.dim() {
            return Err(ShardError::Dimension {
                expected: self.dim(),
                got: other.dim(),
            });
        }
        if other.count == 0 {
            return Ok(());
        }
        let (na, nb) = (self.count as f64, other.count as f64);
        let n = na + nb;
        for i in 0..self.dim() {
            let delta = other.mean[i] - self.mean[i];
            self.mean[i] += delta * nb / n;
            self.m2[i] += other.m2[i] + delta * delta * na * nb / n;
        }
        self.count += other.count;
        Ok(())
    }

    pub fn finish(&self) -> DatasetStats {
        let n = self.count.max(1) as f64;
        DatasetStats {
            mean: self.mean.clone(),
            variance: self.m2.iter().map(|s| (s / n).max(0.0)).collect(),
            row_count: self.count,
        }
    }
}

/// Stats over pooled rows. Spatial shards are mean-pooled first.
pub fn compute_stats(shards: &[ActivationShard]) -> Result<DatasetStats, ShardError> {
    let dim = shards
        .first()
        .map(|s| s.meta.feature_dim)
        .ok_or_else(|| ShardError::Meta("no shards given".into()))?;
    let mut total = StatsAccumulator::new(dim);
    for shard in shards {
        if shard.meta.feature_dim != dim {
            return Err(ShardError::Dimension {
                expected: dim,
                got: shard.meta.feature_dim,
            });
        }
        let mut acc = StatsAccumulator::new(dim);
        for row in &shard.rows {
            match shard.meta.spatial_shape {
                None => acc.push(&row.values)?,
                shape => acc.push(&pool_spatial(&row.values, dim, shape, PoolMode::Mean)?)?,
            }
        }
        total.merge(&acc)?;
    }
    Ok(total.finish())
}
