//! Per-latent top-activating samples in one streaming pass.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::sync::Arc;

use rayon::prelude::*;

use super::AnalysisError;
use crate::model::{encode, KsaeParams};
use crate::real::Real;
use crate::store::{PooledRow, RowSource};

const CHUNK_ROWS: usize = 1024;

#[derive(Debug, Clone, PartialEq)]
pub struct TopSample {
    pub sample_id: String,
    pub activation: f64,
    /// -1 when unlabeled.
    pub label: i32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatentProfile {
    pub latent_id: usize,
    /// Highest activation seen; `-inf` if the latent never fired.
    pub peak_activation: f64,
    /// Best first; ties keep ingest order.
    pub top_samples: Vec<TopSample>,
    /// Samples whose TopK support contained this latent.
    pub fire_count: u64,
}

impl LatentProfile {
    pub fn empty(latent_id: usize) -> Self {
        Self {
            latent_id,
            peak_activation: f64::NEG_INFINITY,
            top_samples: Vec::new(),
            fire_count: 0,
        }
    }
}

#[derive(Debug, Clone)]
struct Candidate {
    activation: f64,
    ingest: u64,
    sample_id: Arc<str>,
    label: i32,
}

// Greater = worse, so a max-heap's top is the entry to evict.
impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .activation
            .total_cmp(&self.activation)
            .then(self.ingest.cmp(&other.ingest))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl PartialEq for Candidate {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Candidate {}

#[derive(Default)]
struct LatentHeap {
    heap: BinaryHeap<Candidate>,
    fire_count: u64,
}

impl LatentHeap {
    fn offer(&mut self, m: usize, c: Candidate) {
        self.fire_count += 1;
        if self.heap.len() < m {
            self.heap.push(c);
        } else if let Some(mut worst) = self.heap.peek_mut() {
            if c < *worst {
                *worst = c;
            }
        }
    }
}

/// Top-`m` samples per latent by activation `z_j`, over every row of
/// `data`. A sample is a candidate for latent `j` only when `j` is in its
/// TopK support.
pub fn top_activating<T: Real>(
    params: &KsaeParams<T>,
    data: &RowSource,
    m: usize,
) -> Result<Vec<LatentProfile>, AnalysisError> {
    if m == 0 {
        return Err(AnalysisError::Invalid("m must be positive".into()));
    }
    let d = data.feature_dim()?;
    if d != params.d {
        return Err(AnalysisError::Dimension { expected: params.d, got: d });
    }
    let n = params.n;
    let mut heaps: Vec<LatentHeap> = (0..n).map(|_| LatentHeap::default()).collect();
    let mut rows = data.rows();
    let mut ingest = 0u64;
    loop {
        let chunk: Vec<PooledRow> = rows.by_ref().take(CHUNK_ROWS).collect::<Result<_, _>>()?;
        if chunk.is_empty() {
            break;
        }
        let codes = chunk
            .par_iter()
            .map(|row| {
                let x: Vec<T> = row.values.iter().map(|&v| T::from_f32(v)).collect();
                encode(params, &x).map(|e| e.code)
            })
            .collect::<Result<Vec<_>, _>>()?;

        // latent -> (row in chunk, activation), rows ascending within a latent
        let mut offsets = vec![0usize; n + 1];
        for c in &codes {
            for &j in &c.indices {
                offsets[j + 1] += 1;
            }
        }
        for j in 0..n {
            offsets[j + 1] += offsets[j];
        }
        let mut cursor = offsets.clone();
        let mut entries = vec![(0usize, 0f64); offsets[n]];
        for (r, c) in codes.iter().enumerate() {
            for (&j, &v) in c.indices.iter().zip(&c.values) {
                entries[cursor[j]] = (r, v.as_f64());
                cursor[j] += 1;
            }
        }

        heaps.par_iter_mut().enumerate().for_each(|(j, heap)| {
            for &(r, activation) in &entries[offsets[j]..offsets[j + 1]] {
                let row = &chunk[r];
                heap.offer(
                    m,
                    Candidate {
                        activation,
                        ingest: ingest + r as u64,
                        sample_id: Arc::clone(&row.sample_id),
                        label: row.label,
                    },
                );
            }
        });
        ingest += chunk.len() as u64;
    }

    Ok(heaps
        .into_iter()
        .enumerate()
        .map(|(latent_id, h)| {
            let top_samples: Vec<TopSample> = h
                .heap
                .into_sorted_vec()
                .into_iter()
                .map(|c| TopSample {
                    sample_id: c.sample_id.to_string(),
                    activation: c.activation,
                    label: c.label,
                })
                .collect();
            LatentProfile {
                latent_id,
                peak_activation: top_samples.first().map_or(f64::NEG_INFINITY, |s| s.activation),
                top_samples,
                fire_count: h.fire_count,
            }
        })
        .collect())
}
