//! Named f64 tensor sections behind an 8-byte magic, a version and a width.
//!
//! Layout: magic | version u32 | d u32 | section count u32 | sections of
//! [name_len u32 | name UTF-8 | value count u64 | values f64], all LE.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use thiserror::Error;

pub const TENSOR_FILE_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum TensorFileError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad magic: expected {expected:?}")]
    BadMagic { expected: String },
    #[error("unsupported version {0}")]
    Version(u32),
    #[error("truncated file")]
    Truncated,
    #[error("missing section {0:?}")]
    MissingSection(String),
    #[error("section {name:?} has {got} values, expected {expected}")]
    SectionLength { name: String, expected: usize, got: usize },
    #[error("invalid section name")]
    InvalidName,
    #[error("trailing bytes after last section")]
    Trailing,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TensorFile {
    pub d: u32,
    pub sections: BTreeMap<String, Vec<f64>>,
}

impl TensorFile {
    pub fn new(d: usize) -> Self {
        Self {
            d: d as u32,
            sections: BTreeMap::new(),
        }
    }

    pub fn put(&mut self, name: &str, values: &[f64]) {
        self.sections.insert(name.to_string(), values.to_vec());
    }

    /// Section `name`, checked to hold exactly `len` values.
    pub fn take(&mut self, name: &str, len: usize) -> Result<Vec<f64>, TensorFileError> {
        let v = self
            .sections
            .remove(name)
            .ok_or_else(|| TensorFileError::MissingSection(name.to_string()))?;
        if v.len() != len {
            return Err(TensorFileError::SectionLength {
                name: name.to_string(),
                expected: len,
                got: v.len(),
            });
        }
        Ok(v)
    }

    pub fn to_bytes(&self, magic: &[u8; 8]) -> Vec<u8> {
        let mut out = magic.to_vec();
        out.extend_from_slice(&TENSOR_FILE_VERSION.to_le_bytes());
        out.extend_from_slice(&self.d.to_le_bytes());
        out.extend_from_slice(&(self.sections.len() as u32).to_le_bytes());
        for (name, values) in &self.sections {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(values.len() as u64).to_le_bytes());
            for v in values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], magic: &[u8; 8]) -> Result<Self, TensorFileError> {
        let mut pos = 0usize;
        let mut take = |n: usize| -> Result<&[u8], TensorFileError> {
            let end = pos.checked_add(n).ok_or(TensorFileError::Truncated)?;
            let s = bytes.get(pos..end).ok_or(TensorFileError::Truncated)?;
            pos = end;
            Ok(s)
        };
        if take(8)? != magic {
            return Err(TensorFileError::BadMagic {
                expected: String::from_utf8_lossy(magic).into_owned(),
            });
        }
        let u32_at = |b: &[u8]| u32::from_le_bytes(b.try_into().unwrap());
        let version = u32_at(take(4)?);
        if version != TENSOR_FILE_VERSION {
            return Err(TensorFileError::Version(version));
        }
        let d = u32_at(take(4)?);
        let count = u32_at(take(4)?);
        let mut sections = BTreeMap::new();
        for _ in 0..count {
            let name_len = u32_at(take(4)?) as usize;
            let name = std::str::from_utf8(take(name_len)?)
                .map_err(|_| TensorFileError::InvalidName)?
                .to_string();
            let n = u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize;
            let raw = take(n.checked_mul(8).ok_or(TensorFileError::Truncated)?)?;
            let values = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            sections.insert(name, values);
        }
        if pos != bytes.len() {
            return Err(TensorFileError::Trailing);
        }
        Ok(Self { d, sections })
    }

    pub fn save(&self, path: impl AsRef<Path>, magic: &[u8; 8]) -> Result<(), TensorFileError> {
        fs::write(path, self.to_bytes(magic))?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>, magic: &[u8; 8]) -> Result<Self, TensorFileError> {
        Self::from_bytes(&fs::read(path)?, magic)
    }
}
