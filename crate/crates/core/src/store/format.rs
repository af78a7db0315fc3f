//! The `ACTS` activation-shard container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic        4 bytes  "ACTS"
//! version      u32      1
//! header_len   u64
//! header       header_len bytes of UTF-8 key=value lines (ShardMeta)
//! rows         row_count times:
//!                id_len  u32
//!                id      id_len bytes UTF-8
//!                label   i32   (-1 = unlabeled)
//!                values  f32 x (d, or d*H*W when spatial_shape is set)
//! ```
//!
//! Spatial rows are channel-major: `values[c * H * W + y * W + x]`.

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use crate::kv::{KvDoc, KvError};

pub const MAGIC: &[u8; 4] = b"ACTS";
pub const VERSION: u32 = 1;
/// Bytes before the header text: magic, version, header length.
pub const PREAMBLE_LEN: u64 = 16;
pub const MAX_HEADER_LEN: u64 = 1 << 24;
pub const MAX_ID_LEN: u32 = 1 << 16;
pub const MAX_TIMESTEP: u32 = 1000;
/// Upper bound on values per row; guards allocations on corrupt headers.
pub const MAX_VALUES_PER_ROW: usize = 1 << 30;

#[derive(Debug, thiserror::Error)]
pub enum ShardError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("bad magic {found:?}, expected \"ACTS\"")]
    BadMagic { found: [u8; 4] },
    #[error("unsupported shard version {0}")]
    UnsupportedVersion(u32),
    #[error("header length {len} at byte 8 exceeds limit {limit}")]
    HeaderTooLarge { len: u64, limit: u64 },
    #[error("truncated shard at byte {offset} while reading {what}")]
    Truncated { offset: u64, what: &'static str },
    #[error("header is not valid UTF-8 (byte {offset})")]
    HeaderEncoding { offset: u64 },
    #[error("header: {0}")]
    Header(#[from] KvError),
    #[error("invalid metadata: {0}")]
    Meta(String),
    #[error("row {row}: {reason}")]
    Row { row: u64, reason: String },
    #[error("row {row} at byte {offset}: {reason}")]
    CorruptRow {
        row: u64,
        offset: u64,
        reason: String,
    },
    #[error("{trailing} unexpected trailing bytes after last row at byte {offset}")]
    TrailingBytes { offset: u64, trailing: u64 },
    #[error("row count mismatch: header declares {declared}, got {written}")]
    RowCount { declared: u64, written: u64 },
    #[error("spatial pooling requires a spatial shape")]
    MissingSpatialShape,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("invalid synthetic spec: {0}")]
    Synth(String),
}

impl ShardError {
    /// True for malformed input as opposed to environment failures.
    pub fn is_validation(&self) -> bool {
        !matches!(self, ShardError::Io(_))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum PromptMode {
    #[default]
    Empty,
    FromClip,
    Generic,
}

impl PromptMode {
    pub fn as_str(self) -> &'static str {
        match self {
            PromptMode::Empty => "empty",
            PromptMode::FromClip => "from_clip",
            PromptMode::Generic => "generic",
        }
    }
}

impl std::str::FromStr for PromptMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "empty" => Ok(PromptMode::Empty),
            "from_clip" => Ok(PromptMode::FromClip),
            "generic" => Ok(PromptMode::Generic),
            other => Err(format!("unknown prompt mode {other:?}")),
        }
    }
}

impl std::fmt::Display for PromptMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum DType {
    #[default]
    F32Le,
}

impl DType {
    pub fn as_str(self) -> &'static str {
        "f32le"
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShardMeta {
    pub model_id: String,
    pub layer_id: String,
    /// DDIM convention: 0 is fully denoised, 1000 is pure noise.
    pub timestep: u32,
    pub prompt_mode: PromptMode,
    pub dataset_id: String,
    pub feature_dim: usize,
    /// `(H, W)` when rows hold unpooled maps.
    pub spatial_shape: Option<(usize, usize)>,
    pub row_count: u64,
    pub dtype: DType,
    /// Label id -> class name. Also mirrored to the `.labels.txt` sidecar.
    pub label_names: Vec<String>,
    /// Unrecognized header keys, preserved verbatim.
    pub extra: BTreeMap<String, String>,
}

const KNOWN_KEYS: &[&str] = &[
    "model_id",
    "layer_id",
    "timestep",
    "prompt_mode",
    "dataset_id",
    "feature_dim",
    "spatial_shape",
    "row_count",
    "dtype",
    "label_count",
];

impl ShardMeta {
    pub fn new(feature_dim: usize) -> Self {
        Self {
            model_id: String::new(),
            layer_id: String::new(),
            timestep: 0,
            prompt_mode: PromptMode::Empty,
            dataset_id: String::new(),
            feature_dim,
            spatial_shape: None,
            row_count: 0,
            dtype: DType::F32Le,
            label_names: Vec::new(),
            extra: BTreeMap::new(),
        }
    }

    pub fn positions(&self) -> usize {
        self.spatial_shape.map_or(1, |(h, w)| h * w)
    }

    /// Number of f32 values stored per row.
    pub fn values_per_row(&self) -> usize {
        self.feature_dim * self.positions()
    }

    /// Bytes occupied by one row with a sample id of `id_len` bytes.
    pub fn row_bytes(&self, id_len: usize) -> u64 {
        4 + id_len as u64 + 4 + 4 * self.values_per_row() as u64
    }

    pub fn validate(&self) -> Result<(), ShardError> {
        if self.feature_dim == 0 {
            return Err(ShardError::Meta("feature_dim must be positive".into()));
        }
        if self.timestep > MAX_TIMESTEP {
            return Err(ShardError::Meta(format!(
                "timestep {} outside [0, {MAX_TIMESTEP}]",
                self.timestep
            )));
        }
        if let Some((h, w)) = self.spatial_shape {
            if h == 0 || w == 0 {
                return Err(ShardError::Meta(format!("degenerate spatial shape {h}x{w}")));
            }
        }
        let per_row = self
            .spatial_shape
            .map_or(Some(self.feature_dim), |(h, w)| {
                self.feature_dim.checked_mul(h).and_then(|v| v.checked_mul(w))
            });
        match per_row {
            Some(v) if v <= MAX_VALUES_PER_ROW => {}
            _ => return Err(ShardError::Meta("values per row exceed limit".into())),
        }
        for k in self.extra.keys() {
            if KNOWN_KEYS.contains(&k.as_str()) || k.starts_with("label.") {
                return Err(ShardError::Meta(format!("extra key {k:?} shadows a reserved key")));
            }
        }
        Ok(())
    }

    pub fn to_kv(&self) -> Result<KvDoc, ShardError> {
        let mut doc = KvDoc::new();
        doc.push("model_id", &self.model_id)?;
        doc.push("layer_id", &self.layer_id)?;
        doc.push("timestep", self.timestep)?;
        doc.push("prompt_mode", self.prompt_mode.as_str())?;
        doc.push("dataset_id", &self.dataset_id)?;
        doc.push("feature_dim", self.feature_dim)?;
        if let Some((h, w)) = self.spatial_shape {
            doc.push("spatial_shape", format!("{h}x{w}"))?;
        }
        doc.push("row_count", self.row_count)?;
        doc.push("dtype", self.dtype.as_str())?;
        doc.push("label_count", self.label_names.len())?;
        for (i, name) in self.label_names.iter().enumerate() {
            doc.push(format!("label.{i}"), name)?;
        }
        for (k, v) in &self.extra {
            doc.push(k.clone(), v)?;
        }
        Ok(doc)
    }

    pub fn from_kv(doc: &KvDoc) -> Result<Self, ShardError> {
        let bad = |k: &str, v: &str| ShardError::Meta(format!("{k}: bad value {v:?}"));
        let num = |k: &str| -> Result<u64, ShardError> {
            let v = doc.require(k)?;
            v.parse::<u64>().map_err(|_| bad(k, v))
        };
        let timestep = u32::try_from(num("timestep")?)
            .map_err(|_| ShardError::Meta("timestep out of range".into()))?;
        let prompt_mode = doc
            .require("prompt_mode")?
            .parse::<PromptMode>()
            .map_err(ShardError::Meta)?;
        let feature_dim = usize::try_from(num("feature_dim")?)
            .map_err(|_| ShardError::Meta("feature_dim out of range".into()))?;
        let spatial_shape = match doc.get("spatial_shape") {
            None => None,
            Some(v) => {
                let (h, w) = v.split_once('x').ok_or_else(|| bad("spatial_shape", v))?;
                let h = h.parse::<usize>().map_err(|_| bad("spatial_shape", v))?;
                let w = w.parse::<usize>().map_err(|_| bad("spatial_shape", v))?;
                Some((h, w))
            }
        };
        let dtype = match doc.require("dtype")? {
            "f32le" => DType::F32Le,
            other => return Err(bad("dtype", other)),
        };
        let label_count = num("label_count")? as usize;
        let mut label_names = Vec::with_capacity(label_count.min(1 << 16));
        for i in 0..label_count {
            label_names.push(doc.require(&format!("label.{i}"))?.to_string());
        }
        let mut extra = BTreeMap::new();
        for (k, v) in doc.entries() {
            if let Some(idx) = k.strip_prefix("label.") {
                match idx.parse::<usize>() {
                    Ok(i) if i < label_count => continue,
                    _ => return Err(ShardError::Meta(format!("stray label key {k:?}"))),
                }
            }
            if !KNOWN_KEYS.contains(&k) {
                extra.insert(k.to_string(), v.to_string());
            }
        }
        let meta = ShardMeta {
            model_id: doc.require("model_id")?.to_string(),
            layer_id: doc.require("layer_id")?.to_string(),
            timestep,
            prompt_mode,
            dataset_id: doc.require("dataset_id")?.to_string(),
            feature_dim,
            spatial_shape,
            row_count: num("row_count")?,
            dtype,
            label_names,
            extra,
        };
        meta.validate()?;
        Ok(meta)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShardRow {
    pub sample_id: String,
    /// Class id, or -1 for unlabeled.
    pub label: i32,
    pub values: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActivationShard {
    pub meta: ShardMeta,
    pub rows: Vec<ShardRow>,
}

impl ActivationShard {
    /// An empty shard; `row_count` tracks `push`.
    pub fn new(meta: ShardMeta) -> Self {
        let mut meta = meta;
        meta.row_count = 0;
        Self {
            meta,
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: ShardRow) {
        self.rows.push(row);
        self.meta.row_count = self.rows.len() as u64;
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn validate(&self) -> Result<(), ShardError> {
        self.meta.validate()?;
        if self.meta.row_count != self.rows.len() as u64 {
            return Err(ShardError::RowCount {
                declared: self.meta.row_count,
                written: self.rows.len() as u64,
            });
        }
        let mut seen = HashSet::with_capacity(self.rows.len());
        for (i, row) in self.rows.iter().enumerate() {
            check_row(&self.meta, i as u64, row)?;
            if !seen.insert(row.sample_id.as_str()) {
                return Err(ShardError::Row {
                    row: i as u64,
                    reason: format!("duplicate sample_id {:?}", row.sample_id),
                });
            }
        }
        Ok(())
    }
}

fn check_row(meta: &ShardMeta, idx: u64, row: &ShardRow) -> Result<(), ShardError> {
    let want = meta.values_per_row();
    if row.values.len() != want {
        return Err(ShardError::Row {
            row: idx,
            reason: format!("expected {want} values, got {}", row.values.len()),
        });
    }
    if row.label < -1 {
        return Err(ShardError::Row {
            row: idx,
            reason: format!("label {} below -1", row.label),
        });
    }
    if row.sample_id.len() > MAX_ID_LEN as usize {
        return Err(ShardError::Row {
            row: idx,
            reason: "sample_id too long".into(),
        });
    }
    Ok(())
}

/// Sidecar path for label names: `<dir>/<stem>.labels.txt`.
pub fn labels_sidecar_path(shard_path: &Path) -> PathBuf {
    let stem = shard_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    shard_path.with_file_name(format!("{stem}.labels.txt"))
}

pub fn write_labels_sidecar(path: &Path, names: &[String]) -> Result<(), ShardError> {
    let mut out = String::new();
    for name in names {
        if name.contains('\n') {
            return Err(ShardError::Meta(format!("label name {name:?} contains a newline")));
        }
        out.push_str(name);
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn read_labels_sidecar(path: &Path) -> Result<Vec<String>, ShardError> {
    let text = std::fs::read_to_string(path)?;
    Ok(text.lines().map(str::to_string).collect())
}

/// Incremental writer. Row count is declared up front in the metadata and
/// checked by [`ShardWriter::finish`].
pub struct ShardWriter<W: Write> {
    inner: W,
    meta: ShardMeta,
    written: u64,
    seen: HashSet<String>,
    buf: Vec<u8>,
}

impl<W: Write> ShardWriter<W> {
    pub fn new(mut inner: W, meta: ShardMeta) -> Result<Self, ShardError> {
        meta.validate()?;
        let header = meta.to_kv()?.to_string();
        inner.write_all(MAGIC)?;
        inner.write_all(&VERSION.to_le_bytes())?;
        inner.write_all(&(header.len() as u64).to_le_bytes())?;
        inner.write_all(header.as_bytes())?;
        Ok(Self {
            inner,
            meta,
            written: 0,
            seen: HashSet::new(),
            buf: Vec::new(),
        })
    }

    pub fn meta(&self) -> &ShardMeta {
        &self.meta
    }

    pub fn write_row(&mut self, row: &ShardRow) -> Result<(), ShardError> {
        if self.written >= self.meta.row_count {
            return Err(ShardError::Row {
                row: self.written,
                reason: format!("more rows than the declared {}", self.meta.row_count),
            });
        }
        check_row(&self.meta, self.written, row)?;
        if !self.seen.insert(row.sample_id.clone()) {
            return Err(ShardError::Row {
                row: self.written,
                reason: format!("duplicate sample_id {:?}", row.sample_id),
            });
        }
        self.buf.clear();
        self.buf.extend_from_slice(&(row.sample_id.len() as u32).to_le_bytes());
        self.buf.extend_from_slice(row.sample_id.as_bytes());
        self.buf.extend_from_slice(&row.label.to_le_bytes());
        for v in &row.values {
            self.buf.extend_from_slice(&v.to_le_bytes());
        }
        self.inner.write_all(&self.buf)?;
        self.written += 1;
        Ok(())
    }

    pub fn finish(mut self) -> Result<W, ShardError> {
        if self.written != self.meta.row_count {
            return Err(ShardError::RowCount {
                declared: self.meta.row_count,
                written: self.written,
            });
        }
        self.inner.flush()?;
        Ok(self.inner)
    }
}

pub fn write_shard_to<W: Write>(shard: &ActivationShard, out: W) -> Result<W, ShardError> {
    shard.validate()?;
    let mut w = ShardWriter::new(out, shard.meta.clone())?;
    for row in &shard.rows {
        w.write_row(row)?;
    }
    w.finish()
}

/// Write a whole shard, plus the labels sidecar when label names are set.
pub fn write_shard(shard: &ActivationShard, path: impl AsRef<Path>) -> Result<(), ShardError> {
    let path = path.as_ref();
    shard.validate()?;
    let file = File::create(path)?;
    let w = write_shard_to(shard, BufWriter::new(file))?;
    w.into_inner().map_err(|e| e.into_error())?.sync_all()?;
    if !shard.meta.label_names.is_empty() {
        write_labels_sidecar(&labels_sidecar_path(path), &shard.meta.label_names)?;
    }
    Ok(())
}

/// Streaming reader; holds one row in memory at a time.
pub struct ShardReader<R: Read> {
    inner: R,
    meta: ShardMeta,
    offset: u64,
    next_row: u64,
    limit: Option<u64>,
    done: bool,
}

impl ShardReader<BufReader<File>> {
    pub fn open(path: impl AsRef<Path>) -> Result<Self, ShardError> {
        let file = File::open(path.as_ref())?;
        let len = file.metadata()?.len();
        Self::with_limit(BufReader::with_capacity(1 << 20, file), Some(len))
    }
}

impl<R: Read> ShardReader<R> {
    pub fn new(inner: R) -> Result<Self, ShardError> {
        Self::with_limit(inner, None)
    }

    /// `limit` is the total stream length when known; it lets corrupt
    /// header lengths fail before any allocation.
    pub fn with_limit(mut inner: R, limit: Option<u64>) -> Result<Self, ShardError> {
        let mut offset = 0u64;
        let mut magic = [0u8; 4];
        read_exact_at(&mut inner, &mut magic, &mut offset, "magic")?;
        if &magic != MAGIC {
            return Err(ShardError::BadMagic { found: magic });
        }
        let mut b4 = [0u8; 4];
        read_exact_at(&mut inner, &mut b4, &mut offset, "version")?;
        let version = u32::from_le_bytes(b4);
        if version != VERSION {
            return Err(ShardError::UnsupportedVersion(version));
        }
        let mut b8 = [0u8; 8];
        read_exact_at(&mut inner, &mut b8, &mut offset, "header length")?;
        let header_len = u64::from_le_bytes(b8);
        if header_len > MAX_HEADER_LEN {
            return Err(ShardError::HeaderTooLarge {
                len: header_len,
                limit: MAX_HEADER_LEN,
            });
        }
        if let Some(total) = limit {
            if PREAMBLE_LEN + header_len > total {
                return Err(ShardError::Truncated {
                    offset: total,
                    what: "header",
                });
            }
        }
        let mut header = vec![0u8; header_len as usize];
        read_exact_at(&mut inner, &mut header, &mut offset, "header")?;
        let text = String::from_utf8(header).map_err(|e| ShardError::HeaderEncoding {
            offset: PREAMBLE_LEN + e.utf8_error().valid_up_to() as u64,
        })?;
        let meta = ShardMeta::from_kv(&KvDoc::parse(&text)?)?;
        if let Some(total) = limit {
            let min_row = meta.row_bytes(0);
            let remaining = total - offset;
            if meta.row_count > 0 && remaining / min_row < meta.row_count {
                return Err(ShardError::Truncated {
                    offset: total,
                    what: "rows (file shorter than declared row count)",
                });
            }
        }
        Ok(Self {
            inner,
            meta,
            offset,
            next_row: 0,
            limit,
            done: false,
        })
    }

    pub fn meta(&self) -> &ShardMeta {
        &self.meta
    }

    /// Byte offset of the next unread byte.
    pub fn offset(&self) -> u64 {
        self.offset
    }

    pub fn read_row(&mut self) -> Result<Option<ShardRow>, ShardError> {
        if self.done {
            return Ok(None);
        }
        if self.next_row == self.meta.row_count {
            self.done = true;
            self.check_eof()?;
            return Ok(None);
        }
        let row_idx = self.next_row;
        let row_start = self.offset;
        let mut b4 = [0u8; 4];
        read_exact_at(&mut self.inner, &mut b4, &mut self.offset, "sample id length")?;
        let id_len = u32::from_le_bytes(b4);
        if id_len > MAX_ID_LEN {
            return Err(ShardError::CorruptRow {
                row: row_idx,
                offset: row_start,
                reason: format!("sample id length {id_len} exceeds {MAX_ID_LEN}"),
            });
        }
        let mut id = vec![0u8; id_len as usize];
        read_exact_at(&mut self.inner, &mut id, &mut self.offset, "sample id")?;
        let sample_id = String::from_utf8(id).map_err(|_| ShardError::CorruptRow {
            row: row_idx,
            offset: row_start + 4,
            reason: "sample id is not UTF-8".into(),
        })?;
        read_exact_at(&mut self.inner, &mut b4, &mut self.offset, "label")?;
        let label = i32::from_le_bytes(b4);
        if label < -1 {
            return Err(ShardError::CorruptRow {
                row: row_idx,
                offset: self.offset - 4,
                reason: format!("label {label} below -1"),
            });
        }
        let count = self.meta.values_per_row();
        if let Some(total) = self.limit {
            if self.offset + 4 * count as u64 > total {
                return Err(ShardError::Truncated {
                    offset: total,
                    what: "row values",
                });
            }
        }
        let mut raw = vec![0u8; 4 * count];
        read_exact_at(&mut self.inner, &mut raw, &mut self.offset, "row values")?;
        let values = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        self.next_row += 1;
        Ok(Some(ShardRow {
            sample_id,
            label,
            values,
        }))
    }

    fn check_eof(&mut self) -> Result<(), ShardError> {
        let mut probe = [0u8; 64];
        let mut trailing = 0u64;
        loop {
            match self.inner.read(&mut probe) {
                Ok(0) => break,
                Ok(n) => trailing += n as u64,
                Err(e) if e.kind() == io::ErrorKind::Interrupted => continue,
                Err(e) => return Err(e.into()),
            }
        }
        if trailing > 0 {
            return Err(ShardError::TrailingBytes {
                offset: self.offset,
                trailing,
            });
        }
        Ok(())
    }

    /// Collect the remaining rows into a shard, checking id uniqueness.
    pub fn into_shard(mut self) -> Result<ActivationShard, ShardError> {
        let mut rows = Vec::with_capacity(self.meta.row_count.min(1 << 20) as usize);
        while let Some(row) = self.read_row()? {
            rows.push(row);
        }
        let shard = ActivationShard {
            meta: self.meta,
            rows,
        };
        shard.validate()?;
        Ok(shard)
    }
}

impl<R: Read> Iterator for ShardReader<R> {
    type Item = Result<ShardRow, ShardError>;

    fn next(&mut self) -> Option<Self::Item> {
        match self.read_row() {
            Ok(Some(row)) => Some(Ok(row)),
            Ok(None) => None,
            Err(e) => {
                self.done = true;
                Some(Err(e))
            }
        }
    }
}

fn read_exact_at<R: Read>(
    r: &mut R,
    buf: &mut [u8],
    offset: &mut u64,
    what: &'static str,
) -> Result<(), ShardError> {
    let mut filled = 0;
    while filled < buf.len() {
        match r.read(&mut buf[filled..]) {
            Ok(0) => {
                return Err(ShardError::Truncated {
                    offset: *offset + filled as u64,
                    what,
                })
            }
            Ok(n) => filled += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => continue,
            Err(e) => return Err(e.into()),
        }
    }
    *offset += buf.len() as u64;
    Ok(())
}

pub fn read_shard(path: impl AsRef<Path>) -> Result<ActivationShard, ShardError> {
    ShardReader::open(path)?.into_shard()
}

pub fn read_shard_from<R: Read>(r: R) -> Result<ActivationShard, ShardError> {
    ShardReader::new(r)?.into_shard()
}
