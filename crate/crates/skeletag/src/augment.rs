//! Sliding-window data augmentation.
//!
//! Each sentence of `n` words expands into every contiguous fragment whose
//! size lies in the configured window range. With the default range
//! `[1, n]`, a sentence yields `n * (n + 1) / 2` fragments, so a corpus of
//! 100 sentences of 19 words yields exactly 19 000 observations. Tags travel
//! with their words, so every fragment is itself a valid tagged sentence.

use std::collections::HashSet;

use thiserror::Error;

use crate::corpus::{Corpus, TaggedSentence};

/// Errors produced by window-spec validation.
#[derive(Debug, Error)]
pub enum AugmentError {
    /// `min_size` was zero or exceeded an explicit `max_size`.
    #[error("invalid window range: min_size {min} must be >= 1 and <= max_size {max:?}")]
    InvalidWindowRange { min: usize, max: Option<usize> },
}

/// The window range for augmentation.
///
/// `max_size = None` means "up to the sentence length", so the range adapts
/// per sentence. Fragments equal in words *and* tags are dropped when
/// `dedup` is set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WindowSpec {
    min_size: usize,
    max_size: Option<usize>,
    dedup: bool,
}

impl Default for WindowSpec {
    /// The full range `[1, sentence length]` without deduplication.
    fn default() -> WindowSpec {
        WindowSpec { min_size: 1, max_size: None, dedup: false }
    }
}

impl WindowSpec {
    /// Builds a window spec, rejecting `min_size == 0` and an explicit
    /// `max_size < min_size`.
    pub fn new(min_size: usize, max_size: Option<usize>, dedup: bool) -> Result<WindowSpec, AugmentError> {
        if min_size == 0 || max_size.is_some_and(|max| max < min_size) {
            return Err(AugmentError::InvalidWindowRange { min: min_size, max: max_size });
        }
        Ok(WindowSpec { min_size, max_size, dedup })
    }

    pub fn min_size(&self) -> usize {
        self.min_size
    }

    /// Explicit upper bound, or `None` for "sentence length".
    pub fn max_size(&self) -> Option<usize> {
        self.max_size
    }

    pub fn dedup(&self) -> bool {
        self.dedup
    }
}

fn fragment(sentence: &TaggedSentence, start: usize, size: usize) -> TaggedSentence {
    TaggedSentence::new(
        sentence.words()[start..start + size].to_vec(),
        sentence.tags()[start..start + size].to_vec(),
    )
    .expect("a fragment of a valid sentence is valid")
}

fn extend_windows(
    sentence: &TaggedSentence,
    spec: &WindowSpec,
    seen: &mut HashSet<TaggedSentence>,
    out: &mut Vec<TaggedSentence>,
) {
    let n = sentence.len();
    let hi = spec.max_size.unwrap_or(n).min(n);
    for size in spec.min_size..=hi {
        for start in 0..=(n - size) {
            let frag = fragment(sentence, start, size);
            if spec.dedup && !seen.insert(frag.clone()) {
                continue;
            }
            out.push(frag);
        }
    }
}

/// All window fragments of one sentence, ordered by increasing window size
/// and then by start position.
///
/// A `min_size` larger than the sentence yields an empty list (not an
/// error). With `dedup`, repeated fragments keep their first occurrence.
pub fn windows(sentence: &TaggedSentence, spec: &WindowSpec) -> Vec<TaggedSentence> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    extend_windows(sentence, spec, &mut seen, &mut out);
    out
}

/// Expands every sentence of a corpus into its window fragments.
///
/// Fragment order follows the corpus sentence order, with each sentence's
/// fragments in [`windows`] order. With `dedup`, duplicates are dropped
/// across the whole corpus (first occurrence wins). The result may be empty
/// when the window range matches nothing.
pub fn augment_corpus(corpus: &Corpus, spec: &WindowSpec) -> Corpus {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for sentence in &corpus.sentences {
        extend_windows(sentence, spec, &mut seen, &mut out);
    }
    Corpus::new(out, format!("{}[windows]", corpus.source_name))
}
