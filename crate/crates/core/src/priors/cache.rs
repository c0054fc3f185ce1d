//! Append-only cache of LLM responses keyed by (template hash, input).

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use super::PriorError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub template_hash: String,
    pub input: String,
    pub raw: String,
    pub parsed: Vec<String>,
    pub timestamp: u64,
}

#[derive(Debug, Default)]
pub struct PriorCache {
    entries: BTreeMap<(String, String), CacheEntry>,
    path: Option<PathBuf>,
    writer: Option<File>,
}

impl PriorCache {
    /// Cache that lives only in memory.
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Opens (or creates) a cache file, replaying every persisted entry.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, PriorError> {
        let path = path.as_ref().to_path_buf();
        let mut entries = BTreeMap::new();
        if path.exists() {
            let f = File::open(&path)?;
            for (i, line) in BufReader::new(f).lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let e: CacheEntry = serde_json::from_str(&line).map_err(|e| {
                    PriorError::Cache(format!("{}:{}: {e}", path.display(), i + 1))
                })?;
                entries.insert((e.template_hash.clone(), e.input.clone()), e);
            }
        } else if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                fs::create_dir_all(parent)?;
            }
        }
        let writer = OpenOptions::new().create(true).append(true).open(&path)?;
        Ok(Self {
            entries,
            path: Some(path),
            writer: Some(writer),
        })
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, template_hash: &str, input: &str) -> Option<&CacheEntry> {
        self.entries
            .get(&(template_hash.to_string(), input.to_string()))
    }

    /// Records a response; persisted entries are flushed and synced before
    /// returning.
    pub fn insert(
        &mut self,
        template_hash: &str,
        input: &str,
        raw: String,
        parsed: Vec<String>,
    ) -> Result<&CacheEntry, PriorError> {
        let timestamp = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        let entry = CacheEntry {
            template_hash: template_hash.to_string(),
            input: input.to_string(),
            raw,
            parsed,
            timestamp,
        };
        if let Some(w) = self.writer.as_mut() {
            let line = serde_json::to_string(&entry)?;
            writeln!(w, "{line}")?;
            w.sync_data()?;
        }
        let key = (entry.template_hash.clone(), entry.input.clone());
        self.entries.insert(key.clone(), entry);
        Ok(&self.entries[&key])
    }
}
