use std::thread;
use std::time::{Duration, Instant};

use super::cache::PriorCache;
use super::client::{complete_with_retry, LlmClient, RetryPolicy};
use super::fallback::{vocabulary_fallback, FallbackVocabulary};
use super::parse::{dedup_keep_first, drop_abstract, parse_numbered_list};
use super::prompt::{build_prompt, InstructionStyle, PromptTemplate, DEFAULT_REQUESTED_COOCCURRENCES};
use super::{LandmarkPriors, PriorError, Provenance};
use crate::embedding::EmbeddingStore;

/// Vocabulary used to pad short cooccurrence responses.
#[derive(Clone, Copy)]
pub struct FallbackSource<'a> {
    pub vocab: &'a FallbackVocabulary,
    pub store: &'a EmbeddingStore,
    pub use_photo_prompt: bool,
}

#[derive(Clone)]
pub struct ExtractOptions<'a> {
    pub n_co: usize,
    pub retry: RetryPolicy,
    /// Minimum spacing between two client calls.
    pub min_interval: Duration,
    pub fallback: Option<FallbackSource<'a>>,
}

impl Default for ExtractOptions<'_> {
    fn default() -> Self {
        Self {
            n_co: 5,
            retry: RetryPolicy::default(),
            min_interval: Duration::ZERO,
            fallback: None,
        }
    }
}

/// Sequential, cache-first prompt runner.
pub struct PriorExtractor<'a> {
    client: &'a dyn LlmClient,
    cache: &'a mut PriorCache,
    opts: ExtractOptions<'a>,
    last_call: Option<Instant>,
}

impl<'a> PriorExtractor<'a> {
    pub fn new(client: &'a dyn LlmClient, cache: &'a mut PriorCache, opts: ExtractOptions<'a>) -> Self {
        Self {
            client,
            cache,
            opts,
            last_call: None,
        }
    }

    /// Parsed items for `input` under `template`, served from the cache when
    /// possible. A response without any numbered line yields an empty list.
    fn query(&mut self, template: &PromptTemplate, input: &str) -> Result<Vec<String>, PriorError> {
        let hash = template.hash();
        if let Some(hit) = self.cache.get(&hash, input) {
            return Ok(hit.parsed.clone());
        }
        let prompt = build_prompt(template, input)?;
        if let Some(last) = self.last_call {
            let since = last.elapsed();
            if since < self.opts.min_interval {
                thread::sleep(self.opts.min_interval - since);
            }
        }
        let raw = complete_with_retry(self.client, &prompt, &self.opts.retry);
        self.last_call = Some(Instant::now());
        let raw = raw?;
        let parsed = match parse_numbered_list(&raw) {
            Ok(items) => items,
            Err(PriorError::NoItemsFound) => Vec::new(),
            Err(e) => return Err(e),
        };
        let entry = self.cache.insert(&hash, input, raw, parsed)?;
        Ok(entry.parsed.clone())
    }

    pub fn extract(&mut self, instruction: &str, style: InstructionStyle) -> Result<LandmarkPriors, PriorError> {
        let lm_template = PromptTemplate::landmark_extraction(style);
        let parsed = self.query(&lm_template, instruction)?;
        if parsed.is_empty() {
            return Err(PriorError::Parse {
                context: format!("landmark response for {instruction:?}"),
            });
        }
        let landmarks = drop_abstract(parsed);
        if landmarks.is_empty() {
            return Err(PriorError::EmptyLandmarkList);
        }

        let co_template = PromptTemplate::cooccurrence(style, DEFAULT_REQUESTED_COOCCURRENCES);
        let n_co = self.opts.n_co;
        let mut cooccurrences = Vec::with_capacity(landmarks.len());
        let mut provenance = Vec::with_capacity(landmarks.len());
        let mut usable = true;
        for lm in &landmarks {
            let items = dedup_keep_first(drop_abstract(self.query(&co_template, lm)?));
            let mut list: Vec<String> = items.into_iter().take(n_co).collect();
            let mut tag = Provenance::Llm;
            if list.len() < n_co {
                match self.opts.fallback {
                    Some(fb) => {
                        let extra =
                            vocabulary_fallback(lm, fb.vocab, fb.store, usize::MAX, fb.use_photo_prompt)?;
                        for e in extra {
                            if list.len() == n_co {
                                break;
                            }
                            if !list.contains(&e) {
                                list.push(e);
                            }
                        }
                        tag = Provenance::VocabularyFallback;
                        if list.len() < n_co {
                            usable = false;
                        }
                    }
                    None => usable = false,
                }
            }
            cooccurrences.push(list);
            provenance.push(tag);
        }
        Ok(LandmarkPriors {
            landmarks,
            cooccurrences,
            provenance,
            usable,
        })
    }
}

/// One-shot convenience wrapper around [`PriorExtractor`].
pub fn extract_priors(
    instruction: &str,
    style: InstructionStyle,
    client: &dyn LlmClient,
    cache: &mut PriorCache,
    opts: ExtractOptions<'_>,
) -> Result<LandmarkPriors, PriorError> {
    PriorExtractor::new(client, cache, opts).extract(instruction, style)
}
