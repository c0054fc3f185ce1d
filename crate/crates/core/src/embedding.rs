//! Read-only store of precomputed view and text embeddings.
//!
//! The store replaces the image and text encoders: every feature the
//! pipeline needs (panorama views, landmark phrases, instructions) is looked
//! up by key. Vectors live on disk as little-endian `f32` and are promoted to
//! `f64` in memory so all loss and gradient arithmetic runs at 64 bits.
//!
//! File layout:
//!
//! ```text
//! "CNSLEMB1" | version u32 | dimension u32 | count u64 |
//!     count × [ key_len u32 | key bytes | dimension × f32 ]
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use unicode_normalization::UnicodeNormalization;

pub const STORE_MAGIC: &[u8; 8] = b"CNSLEMB1";
pub const STORE_VERSION: u32 = 1;
pub const DEFAULT_DIMENSION: usize = 512;
pub const PHOTO_PROMPT: &str = "a photo of a ";

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("duplicate key {0:?}")]
    DuplicateKey(String),
    #[error("key not found: {0:?}")]
    KeyNotFound(String),
    #[error("invalid key: {0}")]
    InvalidKey(String),
    #[error("non-finite value in vector for key {0:?}")]
    NonFinite(String),
    #[error("empty input")]
    EmptyInput,
    #[error("mixed dimensions: {0} vs {1}")]
    MixedDimensions(usize, usize),
}

pub type Result<T> = std::result::Result<T, StoreError>;

/// Dense feature vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FeatureVector(pub Vec<f64>);

impl FeatureVector {
    pub fn new(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Rounds every entry to the nearest `f32`, matching what the store file holds.
    pub fn quantized(&self) -> Self {
        Self(self.0.iter().map(|&v| v as f32 as f64).collect())
    }
}

impl From<Vec<f64>> for FeatureVector {
    fn from(v: Vec<f64>) -> Self {
        Self(v)
    }
}

/// `Σ a_i b_i`, accumulated left to right.
pub fn dot(a: &FeatureVector, b: &FeatureVector) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(StoreError::MixedDimensions(a.dim(), b.dim()));
    }
    Ok(dot_slices(&a.0, &b.0))
}

#[inline]
pub(crate) fn dot_slices(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Componentwise arithmetic mean.
pub fn mean_pool(features: &[FeatureVector]) -> Result<FeatureVector> {
    let first = features.first().ok_or(StoreError::EmptyInput)?;
    let dim = first.dim();
    let mut acc = vec![0.0; dim];
    for f in features {
        if f.dim() != dim {
            return Err(StoreError::MixedDimensions(dim, f.dim()));
        }
        for (a, v) in acc.iter_mut().zip(&f.0) {
            *a += v;
        }
    }
    let n = features.len() as f64;
    Ok(FeatureVector(acc.into_iter().map(|a| a / n).collect()))
}

/// Canonical form of a key: NFC, surrounding whitespace trimmed.
pub fn normalize_key(key: &str) -> String {
    key.nfc().collect::<String>().trim().to_string()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TextQuery {
    pub phrase: String,
    pub use_photo_prompt: bool,
}

impl TextQuery {
    pub fn new(phrase: impl Into<String>, use_photo_prompt: bool) -> Self {
        Self {
            phrase: phrase.into(),
            use_photo_prompt,
        }
    }

    /// The store key this query resolves to.
    pub fn resolved_key(&self) -> String {
        let phrase = normalize_key(&self.phrase);
        if self.use_photo_prompt {
            format!("{PHOTO_PROMPT}{phrase}")
        } else {
            phrase
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StoreSource {
    Synthetic,
    Exported,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StoreMetadata {
    pub source: StoreSource,
    /// Seconds since the Unix epoch.
    pub created_unix: u64,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct LoadOptions {
    /// Rescale every vector to unit L2 norm after loading.
    pub l2_normalize: bool,
}

/// Immutable key → vector map with a fixed dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingStore {
    dimension: usize,
    entries: BTreeMap<String, FeatureVector>,
    metadata: StoreMetadata,
}

impl EmbeddingStore {
    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn metadata(&self) -> &StoreMetadata {
        &self.metadata
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(&normalize_key(key))
    }

    pub fn get(&self, key: &str) -> Result<&FeatureVector> {
        let key = normalize_key(key);
        self.entries.get(&key).ok_or(StoreError::KeyNotFound(key))
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &FeatureVector)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::load_with(path, LoadOptions::default())
    }

    pub fn load_with(path: impl AsRef<Path>, opts: LoadOptions) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path)?;
        let created_unix = fs::metadata(path)
            .and_then(|m| m.modified())
            .ok()
            .and_then(|t| t.duration_since(std::time::UNIX_EPOCH).ok())
            .map(|d| d.as_secs())
            .unwrap_or(0);
        let mut store = Self::from_bytes(&bytes, StoreSource::Exported, created_unix)?;
        if opts.l2_normalize {
            for v in store.entries.values_mut() {
                let n = v.norm();
                if n > 0.0 {
                    v.0.iter_mut().for_each(|x| *x /= n);
                }
            }
        }
        Ok(store)
    }

    pub fn from_bytes(bytes: &[u8], source: StoreSource, created_unix: u64) -> Result<Self> {
        let mut r = Reader { buf: bytes, pos: 0 };
        let magic = r
            .take(8)
            .ok_or_else(|| StoreError::MalformedHeader("file shorter than magic".into()))?;
        if magic != STORE_MAGIC {
            return Err(StoreError::MalformedHeader("bad magic".into()));
        }
        let header_err = || StoreError::MalformedHeader("truncated header".into());
        let version = r.u32().ok_or_else(header_err)?;
        if version != STORE_VERSION {
            return Err(StoreError::MalformedHeader(format!(
                "unsupported version {version}"
            )));
        }
        let dimension = r.u32().ok_or_else(header_err)? as usize;
        if dimension == 0 {
            return Err(StoreError::MalformedHeader("dimension is zero".into()));
        }
        let count = r.u64().ok_or_else(header_err)?;

        let mut builder = StoreBuilder::new(dimension);
        for i in 0..count {
            let short = || {
                StoreError::DimensionMismatch(format!(
                    "record {i} is shorter than the declared dimension {dimension}"
                ))
            };
            let key_len = r.u32().ok_or_else(short)? as usize;
            let key_bytes = r.take(key_len).ok_or_else(short)?;
            let key = std::str::from_utf8(key_bytes)
                .map_err(|_| StoreError::InvalidKey(format!("record {i} key is not UTF-8")))?
                .to_string();
            let raw = r.take(dimension * 4).ok_or_else(short)?;
            let values = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
                .collect();
            builder.insert(key, FeatureVector(values))?;
        }
        if r.pos != bytes.len() {
            return Err(StoreError::DimensionMismatch(format!(
                "{} trailing bytes after {count} records",
                bytes.len() - r.pos
            )));
        }
        Ok(builder.build(source, created_unix))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(24 + self.entries.len() * (self.dimension * 4 + 16));
        out.extend_from_slice(STORE_MAGIC);
        out.extend_from_slice(&STORE_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.dimension as u32).to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u64).to_le_bytes());
        for (key, v) in &self.entries {
            out.extend_from_slice(&(key.len() as u32).to_le_bytes());
            out.extend_from_slice(key.as_bytes());
            for &x in &v.0 {
                out.extend_from_slice(&(x as f32).to_le_bytes());
            }
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = fs::File::create(path)?;
        f.write_all(&self.to_bytes())?;
        f.sync_all()?;
        Ok(())
    }
}

/// Feature for a text phrase, optionally with the photo prompt prefix.
pub fn text_feature<'a>(store: &'a EmbeddingStore, q: &TextQuery) -> Result<&'a FeatureVector> {
    let key = q.resolved_key();
    store
        .entries
        .get(&key)
        .ok_or(StoreError::KeyNotFound(key))
}

/// Mutable staging area; the only way to assemble an [`EmbeddingStore`].
#[derive(Debug, Clone)]
pub struct StoreBuilder {
    dimension: usize,
    entries: BTreeMap<String, FeatureVector>,
}

impl StoreBuilder {
    pub fn new(dimension: usize) -> Self {
        Self {
            dimension,
            entries: BTreeMap::new(),
        }
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(&normalize_key(key))
    }

    pub fn get(&self, key: &str) -> Option<&FeatureVector> {
        self.entries.get(&normalize_key(key))
    }

    /// Inserts a vector, rounding it to `f32` precision.
    pub fn insert(&mut self, key: impl AsRef<str>, v: FeatureVector) -> Result<()> {
        let key = normalize_key(key.as_ref());
        if key.is_empty() {
            return Err(StoreError::InvalidKey("empty key".into()));
        }
        if v.dim() != self.dimension {
            return Err(StoreError::DimensionMismatch(format!(
                "key {key:?} has {} values, store dimension is {}",
                v.dim(),
                self.dimension
            )));
        }
        if !v.is_finite() {
            return Err(StoreError::NonFinite(key));
        }
        if self.entries.contains_key(&key) {
            return Err(StoreError::DuplicateKey(key));
        }
        self.entries.insert(key, v.quantized());
        Ok(())
    }

    pub fn build(self, source: StoreSource, created_unix: u64) -> EmbeddingStore {
        EmbeddingStore {
            dimension: self.dimension,
            entries: self.entries,
            metadata: StoreMetadata {
                source,
                created_unix,
            },
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let end = self.pos.checked_add(n)?;
        let s = self.buf.get(self.pos..end)?;
        self.pos = end;
        Some(s)
    }

    fn u32(&mut self) -> Option<u32> {
        self.take(4).map(|b| u32::from_le_bytes(b.try_into().unwrap()))
    }

    fn u64(&mut self) -> Option<u64> {
        self.take(8).map(|b| u64::from_le_bytes(b.try_into().unwrap()))
    }
}
