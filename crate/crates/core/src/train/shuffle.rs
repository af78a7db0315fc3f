//! Bounded-buffer shuffling over repeated passes of a row stream.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::store::{PooledRow, RowIter, RowSource, ShardError};

/// Shuffles one pass of a stream through a buffer of at most `capacity`
/// rows. Every input row is emitted exactly once.
pub struct BoundedShuffle<I: Iterator> {
    inner: I,
    buf: Vec<I::Item>,
    capacity: usize,
    draining: bool,
}

impl<I: Iterator> BoundedShuffle<I> {
    pub fn new(inner: I, capacity: usize) -> Self {
        Self {
            inner,
            buf: Vec::new(),
            capacity: capacity.max(1),
            draining: false,
        }
    }

    pub fn next_with<R: Rng>(&mut self, rng: &mut R) -> Option<I::Item> {
        if !self.draining {
            while self.buf.len() < self.capacity {
                match self.inner.next() {
                    Some(item) => self.buf.push(item),
                    None => {
                        self.draining = true;
                        break;
                    }
                }
            }
            if !self.draining {
                match self.inner.next() {
                    Some(item) => {
                        let i = rng.random_range(0..self.buf.len());
                        return Some(std::mem::replace(&mut self.buf[i], item));
                    }
                    None => self.draining = true,
                }
            }
        }
        if self.buf.is_empty() {
            return None;
        }
        let i = rng.random_range(0..self.buf.len());
        Some(self.buf.swap_remove(i))
    }
}

/// Endless shuffled stream: pass after pass over `source`, each pass
/// drained through its own bounded buffer. One generator drives all passes.
pub struct EpochStream {
    source: RowSource,
    capacity: usize,
    rng: ChaCha8Rng,
    current: Option<BoundedShuffle<RowIter>>,
    epoch: u64,
    rows_this_epoch: u64,
}

impl EpochStream {
    pub fn new(source: RowSource, capacity: usize, seed: u64) -> Self {
        Self {
            source,
            capacity,
            rng: ChaCha8Rng::seed_from_u64(seed ^ 0x5348_5546_464C_4531),
            current: None,
            epoch: 0,
            rows_this_epoch: 0,
        }
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }
}

impl Iterator for EpochStream {
    type Item = Result<PooledRow, ShardError>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            if self.current.is_none() {
                self.current = Some(BoundedShuffle::new(self.source.rows(), self.capacity));
                self.rows_this_epoch = 0;
            }
            let cur = self.current.as_mut().unwrap();
            match cur.next_with(&mut self.rng) {
                Some(Ok(row)) => {
                    self.rows_this_epoch += 1;
                    return Some(Ok(row));
                }
                Some(Err(e)) => return Some(Err(e)),
                None => {
                    if self.rows_this_epoch == 0 {
                        return Some(Err(ShardError::Meta("training data contains no rows".into())));
                    }
                    self.current = None;
                    self.epoch += 1;
                }
            }
        }
    }
}
