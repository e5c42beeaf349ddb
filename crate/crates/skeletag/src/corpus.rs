//! Two-column CoNLL-style corpus I/O.
//!
//! A corpus file is a sequence of sentences separated by blank lines; each
//! sentence is one `word<TAB>TAG` row per token:
//!
//! ```text
//! мама	NOUN
//! мыла	VERB
//! раму	NOUN
//!
//! кот	NOUN
//! спит	VERB
//! ```
//!
//! Tags are uppercase ASCII letters and underscores (`NOUN`, `AUX`, …).
//! Words are arbitrary non-empty strings without whitespace. [`parse_conll`]
//! and [`write_conll`] round-trip byte-for-byte, and [`split`] produces a
//! deterministic, seed-driven train/validation partition.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

/// The bundled annotated sample corpus: 100 short Russian sentences over a
/// 14-tag inventory (see [`sample_corpus`]).
pub const SAMPLE_CORPUS_TSV: &str = include_str!("../data/sample_ru.conll");

/// Errors produced by corpus parsing, validation, and splitting.
#[derive(Debug, Error)]
pub enum CorpusError {
    /// A data row did not have exactly two tab-separated columns.
    #[error("line {line}: expected two tab-separated columns, found {found}")]
    RowShape { line: usize, found: usize },
    /// A tag was empty or contained characters outside `[A-Z_]`.
    #[error("invalid tag {tag:?}: tags are non-empty uppercase ASCII letters or underscores")]
    InvalidTag { tag: String },
    /// A word was empty or contained whitespace.
    #[error("invalid word {word:?}: words are non-empty and contain no whitespace")]
    InvalidWord { word: String },
    /// Wraps a validation error with the 1-based line it occurred on.
    #[error("line {line}: {source}")]
    AtLine {
        line: usize,
        #[source]
        source: Box<CorpusError>,
    },
    /// The input contained no sentences at all.
    #[error("corpus is empty: no sentences found")]
    Empty,
    /// A sentence had no words.
    #[error("sentence has no words")]
    EmptySentence,
    /// Words and tags of a sentence differ in length.
    #[error("sentence has {words} words but {tags} tags")]
    LengthMismatch { words: usize, tags: usize },
    /// `val_ratio` outside the open interval (0, 1).
    #[error("val_ratio {0} is outside the open interval (0, 1)")]
    InvalidSplitRatio(f64),
    /// Too few sentences to produce two non-empty splits.
    #[error("cannot split a corpus of {0} sentence(s) into two non-empty parts")]
    NotEnoughSentences(usize),
}

/// A part-of-speech tag: non-empty, uppercase ASCII letters and underscores.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Tag(String);

impl Tag {
    /// Validates and wraps a tag name.
    pub fn new(name: &str) -> Result<Tag, CorpusError> {
        if name.is_empty() || !name.chars().all(|c| c.is_ascii_uppercase() || c == '_') {
            return Err(CorpusError::InvalidTag { tag: name.to_string() });
        }
        Ok(Tag(name.to_string()))
    }

    /// The tag name as a string slice.
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl std::fmt::Display for Tag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

fn validate_word(word: &str) -> Result<(), CorpusError> {
    if word.is_empty() || word.chars().any(char::is_whitespace) {
        return Err(CorpusError::InvalidWord { word: word.to_string() });
    }
    Ok(())
}

/// One sentence with exactly one tag per word.
///
/// Invariants (enforced by [`TaggedSentence::new`]): at least one word,
/// `words.len() == tags.len()`, and every word is non-empty without
/// whitespace.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TaggedSentence {
    words: Vec<String>,
    tags: Vec<Tag>,
}

impl TaggedSentence {
    /// Builds a sentence, validating all invariants.
    pub fn new(words: Vec<String>, tags: Vec<Tag>) -> Result<TaggedSentence, CorpusError> {
        if words.is_empty() {
            return Err(CorpusError::EmptySentence);
        }
        if words.len() != tags.len() {
            return Err(CorpusError::LengthMismatch { words: words.len(), tags: tags.len() });
        }
        for word in &words {
            validate_word(word)?;
        }
        Ok(TaggedSentence { words, tags })
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn tags(&self) -> &[Tag] {
        &self.tags
    }

    /// Number of words (equal to the number of tags).
    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }
}

/// An ordered collection of tagged sentences.
///
/// A corpus may be empty in memory (e.g. as the result of augmenting with an
/// impossible window range); [`parse_conll`] and [`write_conll`] both reject
/// the empty case at the file boundary.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corpus {
    pub sentences: Vec<TaggedSentence>,
    /// Where the corpus came from (file name or `"<memory>"`); informational.
    pub source_name: String,
}

impl Corpus {
    pub fn new(sentences: Vec<TaggedSentence>, source_name: impl Into<String>) -> Corpus {
        Corpus { sentences, source_name: source_name.into() }
    }

    /// Number of sentences.
    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    /// Total number of words across all sentences.
    pub fn word_count(&self) -> usize {
        self.sentences.iter().map(TaggedSentence::len).sum()
    }
}

/// The sorted, deduplicated tag inventory of a corpus, with dense ids.
///
/// Ids run `0..len()` in lexicographic tag order, so the mapping is stable
/// across runs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TagSet {
    tags: Vec<Tag>,
}

impl TagSet {
    /// Builds a tag set from any tag iterator; duplicates collapse.
    pub fn from_tags<I: IntoIterator<Item = Tag>>(tags: I) -> TagSet {
        let set: BTreeSet<Tag> = tags.into_iter().collect();
        TagSet { tags: set.into_iter().collect() }
    }

    /// Dense id of a tag, if present.
    pub fn id_of(&self, tag: &Tag) -> Option<usize> {
        self.tags.binary_search(tag).ok()
    }

    /// Tag for a dense id, if in range.
    pub fn tag(&self, id: usize) -> Option<&Tag> {
        self.tags.get(id)
    }

    /// All tags in id order (lexicographic).
    pub fn tags(&self) -> &[Tag] {
        &self.tags
    }

    pub fn len(&self) -> usize {
        self.tags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tags.is_empty()
    }
}

/// Parses two-column CoNLL-style text into a [`Corpus`].
///
/// Blank lines separate sentences; runs of blank lines collapse. Errors
/// report 1-based line numbers. Input with zero sentences is an error.
pub fn parse_conll(text: &str) -> Result<Corpus, CorpusError> {
    let mut sentences = Vec::new();
    let mut words: Vec<String> = Vec::new();
    let mut tags: Vec<Tag> = Vec::new();

    let mut flush =
        |words: &mut Vec<String>, tags: &mut Vec<Tag>| -> Result<(), CorpusError> {
            if !words.is_empty() {
                sentences.push(TaggedSentence::new(
                    std::mem::take(words),
                    std::mem::take(tags),
                )?);
            }
            Ok(())
        };

    for (idx, raw_line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw_line.strip_suffix('\r').unwrap_or(raw_line);
        if line.is_empty() {
            flush(&mut words, &mut tags)?;
            continue;
        }
        let mut columns = line.split('\t');
        let (word, tag) = match (columns.next(), columns.next(), columns.next()) {
            (Some(w), Some(t), None) => (w, t),
            _ => {
                return Err(CorpusError::RowShape {
                    line: line_no,
                    found: line.split('\t').count(),
                })
            }
        };
        let at = |source: CorpusError| CorpusError::AtLine { line: line_no, source: Box::new(source) };
        validate_word(word).map_err(at)?;
        words.push(word.to_string());
        tags.push(Tag::new(tag).map_err(at)?);
    }
    flush(&mut words, &mut tags)?;

    if sentences.is_empty() {
        return Err(CorpusError::Empty);
    }
    Ok(Corpus::new(sentences, "<memory>"))
}

/// Serialises a corpus back to two-column CoNLL text.
///
/// Sentences are separated by exactly one blank line and the output ends with
/// a newline, so `write_conll` inverts [`parse_conll`] byte-for-byte.
/// An empty corpus is an error.
pub fn write_conll(corpus: &Corpus) -> Result<String, CorpusError> {
    if corpus.sentences.is_empty() {
        return Err(CorpusError::Empty);
    }
    let blocks: Vec<String> = corpus
        .sentences
        .iter()
        .map(|sentence| {
            sentence
                .words()
                .iter()
                .zip(sentence.tags())
                .map(|(word, tag)| format!("{word}\t{tag}"))
                .collect::<Vec<_>>()
                .join("\n")
        })
        .collect();
    Ok(blocks.join("\n\n") + "\n")
}

/// Splits a corpus into `(train, val)` parts.
///
/// Membership is decided by a seeded shuffle (`ChaCha8`, `seed`), taking
/// `round(len * val_ratio)` sentences (clamped so both parts stay non-empty)
/// for validation. Within each part, sentences keep their original relative
/// order. The same `(corpus, val_ratio, seed)` always yields the same split.
pub fn split(corpus: &Corpus, val_ratio: f64, seed: u64) -> Result<(Corpus, Corpus), CorpusError> {
    if !(val_ratio > 0.0 && val_ratio < 1.0) {
        return Err(CorpusError::InvalidSplitRatio(val_ratio));
    }
    let n = corpus.sentences.len();
    if n < 2 {
        return Err(CorpusError::NotEnoughSentences(n));
    }
    let n_val = ((n as f64 * val_ratio).round() as usize).clamp(1, n - 1);

    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let val_set: BTreeSet<usize> = order.into_iter().take(n_val).collect();

    let mut train = Vec::with_capacity(n - n_val);
    let mut val = Vec::with_capacity(n_val);
    for (idx, sentence) in corpus.sentences.iter().enumerate() {
        if val_set.contains(&idx) {
            val.push(sentence.clone());
        } else {
            train.push(sentence.clone());
        }
    }
    Ok((
        Corpus::new(train, format!("{}[train]", corpus.source_name)),
        Corpus::new(val, format!("{}[val]", corpus.source_name)),
    ))
}

/// Collects the [`TagSet`] of every tag that occurs in the corpus.
pub fn tagset_of(corpus: &Corpus) -> TagSet {
    TagSet::from_tags(
        corpus
            .sentences
            .iter()
            .flat_map(|sentence| sentence.tags().iter().cloned()),
    )
}

/// Parses the bundled sample corpus (100 annotated Russian sentences).
pub fn sample_corpus() -> Corpus {
    let mut corpus = parse_conll(SAMPLE_CORPUS_TSV).expect("bundled sample corpus is well-formed");
    corpus.source_name = "sample_ru.conll".to_string();
    corpus
}
