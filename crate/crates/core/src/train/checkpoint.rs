//! `KSAE` checkpoint files.
//!
//! ```text
//! magic "KSAE" | version u32 | precision u32 (0 = f32, 1 = f64)
//! d u64 | n u64 | k u64 | seed u64 | step u64 | samples_seen u64
//! W_enc (n x d) | W_dec (d x n) | b_pre (d) | b_enc (n)      row-major, LE
//! adam: t u64 | beta1 f64 | beta2 f64 | eps f64 | m (4 tensors) | v (4 tensors)
//! liveness: window u64 | last_fired n x u64 | fire_counts n x u64
//! config: len u64 | TrainConfig as key=value text
//! ```

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use crate::kv::KvDoc;
use crate::model::{AdamConfig, AdamState, KsaeGrads, KsaeParams};
use crate::real::{width, Precision, Real};

use super::config::TrainConfig;
use super::metrics::LivenessTracker;

pub const MAGIC: &[u8; 4] = b"KSAE";
pub const VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a checkpoint (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("corrupt checkpoint at byte {offset}: {reason}")]
    Corrupt { offset: usize, reason: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<T> {
    pub params: KsaeParams<T>,
    pub adam: AdamState<T>,
    /// Optimizer steps completed.
    pub step: u64,
    /// Rows consumed from the shuffled stream.
    pub samples_seen: u64,
    pub liveness: LivenessTracker,
    pub config: TrainConfig,
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_tensor<T: Real>(out: &mut Vec<u8>, t: &[T]) {
    out.reserve(t.len() * width(T::PRECISION));
    for &v in t {
        v.write_le(out);
    }
}

/// Transposed-decoder layout to `d x n` row-major, element-generic.
fn dec_row_major<T: Real>(dec_t: &[T], d: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); d * n];
    for j in 0..n {
        for i in 0..d {
            out[i * n + j] = dec_t[j * d + i];
        }
    }
    out
}

fn dec_transposed<T: Real>(row_major: &[T], d: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); d * n];
    for i in 0..d {
        for j in 0..n {
            out[j * d + i] = row_major[i * n + j];
        }
    }
    out
}

fn put_grads<T: Real>(out: &mut Vec<u8>, g: &KsaeGrads<T>, d: usize, n: usize) {
    put_tensor(out, &g.w_enc);
    put_tensor(out, &dec_row_major(&g.w_dec_t, d, n));
    put_tensor(out, &g.b_pre);
    put_tensor(out, &g.b_enc);
}

impl<T: Real> Checkpoint<T> {
    pub fn to_bytes(&self) -> Vec<u8> {
        let p = &self.params;
        let (d, n) = (p.d, p.n);
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        put_u32(&mut out, VERSION);
        put_u32(&mut out, match T::PRECISION {
            Precision::F32 => 0,
            Precision::F64 => 1,
        });
        for v in [d as u64, n as u64, p.k as u64, p.seed, self.step, self.samples_seen] {
            put_u64(&mut out, v);
        }
        put_tensor(&mut out, &p.w_enc);
        put_tensor(&mut out, &p.w_dec_row_major());
        put_tensor(&mut out, &p.b_pre);
        put_tensor(&mut out, &p.b_enc);

        put_u64(&mut out, self.adam.t);
        for v in [self.adam.config.beta1, self.adam.config.beta2, self.adam.config.eps] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        put_grads(&mut out, &self.adam.m, d, n);
        put_grads(&mut out, &self.adam.v, d, n);

        put_u64(&mut out, self.liveness.window);
        for &v in self.liveness.last_fired.iter().chain(&self.liveness.fire_counts) {
            put_u64(&mut out, v);
        }
        let cfg = self.config.to_kv().to_string();
        put_u64(&mut out, cfg.len() as u64);
        out.extend_from_slice(cfg.as_bytes());
        out
    }

    /// Atomic save: write a sibling temp file, then rename over `path`.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), CheckpointError> {
        let path = path.as_ref();
        let tmp = path.with_extension("ksae.tmp");
        {
            let mut w = BufWriter::new(File::create(&tmp)?);
            w.write_all(&self.to_bytes())?;
            w.into_inner().map_err(|e| e.into_error())?.sync_all()?;
        }
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    /// Parse a checkpoint of either precision, converting to `T`.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        let mut r = Cursor { bytes, pos: 0 };
        if r.take(4, "magic")? != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let version = r.u32("version")?;
        if version != VERSION {
            return Err(CheckpointError::Version(version));
        }
        let precision = match r.u32("precision")? {
            0 => Precision::F32,
            1 => Precision::F64,
            other => return Err(r.corrupt(format!("unknown precision code {other}"))),
        };
        let d = r.usize("d")?;
        let n = r.usize("n")?;
        let k = r.usize("k")?;
        let seed = r.u64("seed")?;
        let step = r.u64("step")?;
        let samples_seen = r.u64("samples_seen")?;
        let nd = d
            .checked_mul(n)
            .filter(|&v| v.saturating_mul(width(precision)) <= bytes.len())
            .ok_or_else(|| r.corrupt(format!("implausible dims d={d} n={n}")))?;

        let mut params = KsaeParams::<T>::zeros(d, n, k, seed).map_err(|e| r.corrupt(e.to_string()))?;
        params.w_enc = r.tensor(nd, precision)?;
        let w_dec: Vec<T> = r.tensor(nd, precision)?;
        params.w_dec_t = dec_transposed(&w_dec, d, n);
        params.b_pre = r.tensor(d, precision)?;
        params.b_enc = r.tensor(n, precision)?;

        let t = r.u64("adam t")?;
        let config = AdamConfig {
            beta1: r.f64("beta1")?,
            beta2: r.f64("beta2")?,
            eps: r.f64("eps")?,
        };
        let mut grads = || -> Result<KsaeGrads<T>, CheckpointError> {
            let w_enc = r.tensor(nd, precision)?;
            let dec: Vec<T> = r.tensor(nd, precision)?;
            Ok(KsaeGrads {
                w_enc,
                w_dec_t: dec_transposed(&dec, d, n),
                b_pre: r.tensor(d, precision)?,
                b_enc: r.tensor(n, precision)?,
            })
        };
        let m = grads()?;
        let v = grads()?;
        let adam = AdamState { m, v, t, config };

        let window = r.u64("dead window")?;
        let mut liveness = LivenessTracker::new(n, window);
        liveness.samples_seen = samples_seen;
        for slot in liveness.last_fired.iter_mut() {
            *slot = r.u64("last_fired")?;
        }
        for slot in liveness.fire_counts.iter_mut() {
            *slot = r.u64("fire_counts")?;
        }
        let cfg_len = r.usize("config length")?;
        let cfg_bytes = r.take(cfg_len, "config")?;
        let cfg_text = std::str::from_utf8(cfg_bytes).map_err(|_| r.corrupt("config is not UTF-8".into()))?;
        let config = KvDoc::parse(cfg_text)
            .and_then(|doc| TrainConfig::from_kv(&doc))
            .map_err(|e| r.corrupt(format!("config: {e}")))?;
        if r.pos != bytes.len() {
            return Err(r.corrupt(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Checkpoint {
            params,
            adam,
            step,
            samples_seen,
            liveness,
            config,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CheckpointError> {
        let mut bytes = Vec::new();
        File::open(path.as_ref())?.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }

    pub fn cast<U: Real>(&self) -> Checkpoint<U> {
        Checkpoint {
            params: self.params.cast(),
            adam: self.adam.cast(),
            step: self.step,
            samples_seen: self.samples_seen,
            liveness: self.liveness.clone(),
            config: self.config.clone(),
        }
    }
}

/// Peek at the stored element precision without decoding tensors.
pub fn checkpoint_precision(path: impl AsRef<Path>) -> Result<Precision, CheckpointError> {
    let mut head = [0u8; 12];
    File::open(path.as_ref())?.read_exact(&mut head)?;
    if &head[..4] != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    match u32::from_le_bytes(head[8..12].try_into().unwrap()) {
        0 => Ok(Precision::F32),
        1 => Ok(Precision::F64),
        other => Err(CheckpointError::Corrupt {
            offset: 8,
            reason: format!("unknown precision code {other}"),
        }),
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn corrupt(&self, reason: String) -> CheckpointError {
        CheckpointError::Corrupt {
            offset: self.pos,
            reason,
        }
    }

    fn take(&mut self, len: usize, what: &str) -> Result<&'a [u8], CheckpointError> {
        let end = self
            .pos
            .checked_add(len)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| self.corrupt(format!("truncated while reading {what}")))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self, what: &str) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn usize(&mut self, what: &str) -> Result<usize, CheckpointError> {
        let v = self.u64(what)?;
        usize::try_from(v).map_err(|_| self.corrupt(format!("{what} {v} overflows")))
    }

    fn f64(&mut self, what: &str) -> Result<f64, CheckpointError> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn tensor<T: Real>(&mut self, len: usize, p: Precision) -> Result<Vec<T>, CheckpointError> {
        let w = width(p);
        let bytes = self.take(len * w, "tensor")?;
        Ok(bytes
            .chunks_exact(w)
            .map(|c| match p {
                Precision::F32 => T::from_f32(f32::read_le(c)),
                Precision::F64 => T::from_f64(f64::read_le(c)),
            })
            .collect())
    }
}
