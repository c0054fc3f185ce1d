//! Landmark and cooccurrence priors: prompts, client contract, parsing,
//! caching, vocabulary fallback, and the priors file.

pub mod cache;
pub mod client;
pub mod extract;
pub mod fallback;
pub mod parse;
pub mod prompt;

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::StoreError;

pub use cache::{CacheEntry, PriorCache};
pub use client::{ClientError, LiveClient, LlmClient, ReplayClient, RetryPolicy, TranscriptEntry};
pub use extract::{extract_priors, ExtractOptions, FallbackSource, PriorExtractor};
pub use fallback::{vocabulary_fallback, FallbackVocabulary};
pub use parse::{parse_numbered_list, ABSTRACT_STOPLIST};
pub use prompt::{build_prompt, InstructionStyle, PromptKind, PromptTemplate};

#[derive(Debug, Error)]
pub enum PriorError {
    #[error("input is empty")]
    EmptyInput,
    #[error("no numbered items found")]
    NoItemsFound,
    #[error("invalid template: {0}")]
    InvalidTemplate(String),
    #[error("llm client: {0}")]
    Client(#[from] ClientError),
    #[error("could not parse {context}")]
    Parse { context: String },
    #[error("landmark list is empty after filtering")]
    EmptyLandmarkList,
    #[error("fallback vocabulary is empty")]
    EmptyVocabulary,
    #[error("embedding store: {0}")]
    Store(#[from] StoreError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("cache: {0}")]
    Cache(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Llm,
    VocabularyFallback,
    Synthetic,
}

/// Ordered landmarks with one cooccurrence list each. `provenance` is
/// per landmark.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LandmarkPriors {
    pub landmarks: Vec<String>,
    pub cooccurrences: Vec<Vec<String>>,
    pub provenance: Vec<Provenance>,
    #[serde(default = "default_usable")]
    pub usable: bool,
}

fn default_usable() -> bool {
    true
}

impl LandmarkPriors {
    pub fn n_landmarks(&self) -> usize {
        self.landmarks.len()
    }

    /// Joins two priors in order, e.g. for paths stitched from two
    /// instructions.
    pub fn concat(&self, next: &LandmarkPriors) -> LandmarkPriors {
        let mut out = self.clone();
        out.landmarks.extend(next.landmarks.iter().cloned());
        out.cooccurrences.extend(next.cooccurrences.iter().cloned());
        out.provenance.extend(next.provenance.iter().copied());
        out.usable = self.usable && next.usable;
        out
    }

    /// Keeps the first `n_co` cooccurrences of every landmark.
    pub fn truncated(&self, n_co: usize) -> LandmarkPriors {
        let mut out = self.clone();
        for list in &mut out.cooccurrences {
            list.truncate(n_co);
        }
        out
    }
}

/// One line of a priors file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorRecord {
    pub instruction_id: String,
    #[serde(flatten)]
    pub priors: LandmarkPriors,
}

/// One line of an instructions file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstructionRecord {
    pub instruction_id: String,
    pub instruction: String,
    #[serde(default = "default_style")]
    pub style: InstructionStyle,
}

fn default_style() -> InstructionStyle {
    InstructionStyle::FineGrained
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, PriorError> {
    let f = File::open(path)?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| PriorError::Parse {
            context: format!("{}:{}: {e}", path.display(), i + 1),
        })?);
    }
    Ok(out)
}

fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), PriorError> {
    let mut w = BufWriter::new(File::create(path)?);
    for r in rows {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_priors(path: impl AsRef<Path>) -> Result<Vec<PriorRecord>, PriorError> {
    read_jsonl(path.as_ref())
}

pub fn write_priors(path: impl AsRef<Path>, records: &[PriorRecord]) -> Result<(), PriorError> {
    write_jsonl(path.as_ref(), records)
}

pub fn read_instructions(path: impl AsRef<Path>) -> Result<Vec<InstructionRecord>, PriorError> {
    read_jsonl(path.as_ref())
}

pub fn write_instructions(path: impl AsRef<Path>, records: &[InstructionRecord]) -> Result<(), PriorError> {
    write_jsonl(path.as_ref(), records)
}
