//! Row streams over in-memory or on-disk shards, and a prefetch thread.

use std::path::PathBuf;
use std::sync::mpsc::{sync_channel, Receiver};
use std::sync::Arc;
use std::thread::JoinHandle;

use super::format::{ActivationShard, ShardError, ShardMeta, ShardReader, ShardRow};
use super::pool::{pool_spatial, PoolMode};

/// A pooled row ready for the model.
#[derive(Debug, Clone, PartialEq)]
pub struct PooledRow {
    pub sample_id: Arc<str>,
    pub label: i32,
    pub values: Vec<f32>,
}

pub type RowIter = Box<dyn Iterator<Item = Result<PooledRow, ShardError>> + Send>;

/// Shards to stream. Cloning is cheap; each call to [`RowSource::rows`]
/// starts a fresh pass.
#[derive(Debug, Clone)]
pub enum RowSource {
    Memory(Arc<Vec<ActivationShard>>),
    Files(Vec<PathBuf>),
}

impl RowSource {
    pub fn memory(shards: Vec<ActivationShard>) -> Self {
        RowSource::Memory(Arc::new(shards))
    }

    pub fn metas(&self) -> Result<Vec<ShardMeta>, ShardError> {
        match self {
            RowSource::Memory(shards) => Ok(shards.iter().map(|s| s.meta.clone()).collect()),
            RowSource::Files(paths) => paths
                .iter()
                .map(|p| ShardReader::open(p).map(|r| r.meta().clone()))
                .collect(),
        }
    }

    /// Shared pooled feature dimension; errors if shards disagree.
    pub fn feature_dim(&self) -> Result<usize, ShardError> {
        let metas = self.metas()?;
        let first = metas
            .first()
            .ok_or_else(|| ShardError::Meta("no shards given".into()))?
            .feature_dim;
        for m in &metas {
            if m.feature_dim != first {
                return Err(ShardError::Dimension {
                    expected: first,
                    got: m.feature_dim,
                });
            }
        }
        Ok(first)
    }

    pub fn row_count(&self) -> Result<u64, ShardError> {
        Ok(self.metas()?.iter().map(|m| m.row_count).sum())
    }

    pub fn label_names(&self) -> Result<Vec<String>, ShardError> {
        Ok(self
            .metas()?
            .into_iter()
            .map(|m| m.label_names)
            .find(|l| !l.is_empty())
            .unwrap_or_default())
    }

    /// All rows of all shards in order, mean-pooled when spatial.
    pub fn rows(&self) -> RowIter {
        match self {
            RowSource::Memory(shards) => {
                let shards = Arc::clone(shards);
                let mut si = 0;
                let mut ri = 0;
                Box::new(std::iter::from_fn(move || loop {
                    let shard = shards.get(si)?;
                    match shard.rows.get(ri) {
                        Some(row) => {
                            ri += 1;
                            let values = match shard.meta.spatial_shape {
                                None => Ok(row.values.clone()),
                                shape => pool_spatial(&row.values, shard.meta.feature_dim, shape, PoolMode::Mean),
                            };
                            return Some(values.map(|values| PooledRow {
                                sample_id: Arc::from(row.sample_id.as_str()),
                                label: row.label,
                                values,
                            }));
                        }
                        None => {
                            si += 1;
                            ri = 0;
                        }
                    }
                }))
            }
            RowSource::Files(paths) => {
                let paths = paths.clone();
                Box::new(paths.into_iter().flat_map(|p| -> RowIter {
                    match ShardReader::open(&p) {
                        Err(e) => Box::new(std::iter::once(Err(e))),
                        Ok(reader) => {
                            let d = reader.meta().feature_dim;
                            let shape = reader.meta().spatial_shape;
                            Box::new(reader.map(move |r| {
                                let row = r?;
                                let values = match shape {
                                    None => row.values,
                                    s => pool_spatial(&row.values, d, s, PoolMode::Mean)?,
                                };
                                Ok(PooledRow {
                                    sample_id: Arc::from(row.sample_id),
                                    label: row.label,
                                    values,
                                })
                            }))
                        }
                    }
                }))
            }
        }
    }
}

impl RowSource {
    /// Visit every stored row, unpooled, with its shard's metadata.
    pub fn visit_raw<E, F>(&self, mut f: F) -> Result<(), E>
    where
        E: From<ShardError>,
        F: FnMut(&ShardMeta, &ShardRow) -> Result<(), E>,
    {
        match self {
            RowSource::Memory(shards) => {
                for shard in shards.iter() {
                    for row in &shard.rows {
                        f(&shard.meta, row)?;
                    }
                }
            }
            RowSource::Files(paths) => {
                for p in paths {
                    let mut reader = ShardReader::open(p)?;
                    let meta = reader.meta().clone();
                    while let Some(row) = reader.read_row()? {
                        f(&meta, &row)?;
                    }
                }
            }
        }
        Ok(())
    }
}

/// Runs an iterator on a dedicated producer thread, handing items over a
/// bounded channel so I/O overlaps with the consumer's compute.
pub struct Prefetch<T: Send + 'static> {
    rx: Option<Receiver<T>>,
    handle: Option<JoinHandle<()>>,
}

impl<T: Send + 'static> Prefetch<T> {
    pub fn spawn<I>(iter: I, depth: usize) -> Self
    where
        I: Iterator<Item = T> + Send + 'static,
    {
        let (tx, rx) = sync_channel(depth.max(1));
        let handle = std::thread::Builder::new()
            .name("ksae-prefetch".into())
            .spawn(move || {
                for item in iter {
                    if tx.send(item).is_err() {
                        break;
                    }
                }
            })
            .expect("spawn prefetch thread");
        Self {
            rx: Some(rx),
            handle: Some(handle),
        }
    }
}

impl<T: Send + 'static> Iterator for Prefetch<T> {
    type Item = T;
    fn next(&mut self) -> Option<T> {
        self.rx.as_ref()?.recv().ok()
    }
}

impl<T: Send + 'static> Drop for Prefetch<T> {
    fn drop(&mut self) {
        // closing the receiver unblocks a producer stuck in send()
        self.rx.take();
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

/// Groups an iterator into vectors of `size` (last one may be short).
pub fn batched<I: Iterator>(iter: I, size: usize) -> impl Iterator<Item = Vec<I::Item>> {
    let mut iter = iter.fuse();
    let size = size.max(1);
    std::iter::from_fn(move || {
        let batch: Vec<_> = iter.by_ref().take(size).collect();
        (!batch.is_empty()).then_some(batch)
    })
}
