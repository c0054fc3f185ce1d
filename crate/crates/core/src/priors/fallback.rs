//! Landmark → cooccurrence vocabulary built from previously harvested priors,
//! used when asking the model is too expensive.

use std::collections::BTreeMap;

use super::{PriorError, PriorRecord};
use crate::embedding::{dot, text_feature, EmbeddingStore, TextQuery};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FallbackVocabulary {
    entries: BTreeMap<String, Vec<String>>,
}

impl FallbackVocabulary {
    pub fn new(entries: BTreeMap<String, Vec<String>>) -> Self {
        Self { entries }
    }

    /// Collects every landmark whose cooccurrence list has at least
    /// `min_len` items. The first record seen for a landmark wins.
    pub fn from_records<'a>(records: impl IntoIterator<Item = &'a PriorRecord>, min_len: usize) -> Self {
        let mut entries = BTreeMap::new();
        for r in records {
            for (lm, cos) in r.priors.landmarks.iter().zip(&r.priors.cooccurrences) {
                if cos.len() >= min_len && !entries.contains_key(lm) {
                    entries.insert(lm.clone(), cos.clone());
                }
            }
        }
        Self { entries }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, landmark: &str) -> Option<&[String]> {
        self.entries.get(landmark).map(Vec::as_slice)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[String])> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }
}

/// Cooccurrences for `landmark`: the vocabulary's own list on an exact hit,
/// otherwise the list of the key whose text feature has the largest dot
/// product with the landmark's. Ties go to the lexicographically first key.
pub fn vocabulary_fallback(
    landmark: &str,
    vocab: &FallbackVocabulary,
    store: &EmbeddingStore,
    n_co: usize,
    use_photo_prompt: bool,
) -> Result<Vec<String>, PriorError> {
    if vocab.is_empty() {
        return Err(PriorError::EmptyVocabulary);
    }
    if let Some(list) = vocab.get(landmark) {
        return Ok(list.iter().take(n_co).cloned().collect());
    }
    let query = text_feature(store, &TextQuery::new(landmark, use_photo_prompt))?;
    let mut best: Option<(f64, &[String])> = None;
    for (key, list) in vocab.iter() {
        let f = text_feature(store, &TextQuery::new(key, use_photo_prompt))?;
        let sim = dot(query, f)?;
        if best.is_none_or(|(b, _)| sim > b) {
            best = Some((sim, list));
        }
    }
    let (_, list) = best.expect("vocabulary is nonempty");
    Ok(list.iter().take(n_co).cloned().collect())
}
