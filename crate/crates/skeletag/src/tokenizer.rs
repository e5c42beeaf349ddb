//! Byte-pair-encoding subword tokenizer, built from scratch.
//!
//! Training splits words into character symbols (word-internal symbols carry
//! a `##` continuation prefix) and repeatedly merges the most frequent
//! adjacent symbol pair, so frequent words collapse into single tokens while
//! rare words decompose into subwords. Five special tokens occupy fixed ids:
//! `[PAD]`=0, `[UNK]`=1, `[CLS]`=2, `[SEP]`=3, `[MASK]`=4.
//!
//! [`Tokenizer::encode_tagged`] aligns word-level tags to subwords: the
//! first subword of a word receives the tag id, continuations and special
//! positions receive [`IGNORE_LABEL`] so the loss and the metrics skip them.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::{TagSet, TaggedSentence};

pub const PAD_ID: u32 = 0;
pub const UNK_ID: u32 = 1;
pub const CLS_ID: u32 = 2;
pub const SEP_ID: u32 = 3;
pub const MASK_ID: u32 = 4;

pub const PAD_TOKEN: &str = "[PAD]";
pub const UNK_TOKEN: &str = "[UNK]";
pub const CLS_TOKEN: &str = "[CLS]";
pub const SEP_TOKEN: &str = "[SEP]";
pub const MASK_TOKEN: &str = "[MASK]";

/// The five special tokens in id order.
pub const SPECIAL_TOKENS: [&str; 5] = [PAD_TOKEN, UNK_TOKEN, CLS_TOKEN, SEP_TOKEN, MASK_TOKEN];

/// Label value for positions that carry no supervision: `[CLS]`, `[SEP]`,
/// `[PAD]`, and word-continuation subwords.
pub const IGNORE_LABEL: i32 = -1;

const FILE_FORMAT: &str = "skeletag-bpe";
const FILE_VERSION: u32 = 1;

/// Errors produced by tokenizer training, encoding, and serialisation.
#[derive(Debug, Error)]
pub enum TokenizerError {
    /// Training texts contained no words.
    #[error("cannot train a tokenizer on empty text")]
    EmptyCorpus,
    /// Requested vocabulary cannot even hold the alphabet plus specials.
    #[error("vocab_size {requested} is too small: alphabet plus specials needs {needed}")]
    VocabTooSmall { requested: usize, needed: usize },
    /// Encoding was asked for an empty word list.
    #[error("cannot encode an empty sentence")]
    EmptySentence,
    /// A word was empty or contained whitespace.
    #[error("invalid word {word:?}: words are non-empty and contain no whitespace")]
    InvalidWord { word: String },
    /// `max_len` cannot hold `[CLS]`, one subword, and `[SEP]`.
    #[error("max_len {0} is too small: need at least 3 positions")]
    MaxLenTooSmall(usize),
    /// Strict-mode encoding overflowed `max_len`.
    #[error("sentence needs {needed} positions but max_len is {max_len}")]
    SentenceTooLong { needed: usize, max_len: usize },
    /// Even the first word of the sentence does not fit within `max_len`.
    #[error("word {word:?} alone does not fit in max_len {max_len}")]
    WordTooLong { word: String, max_len: usize },
    /// A tag of the sentence is absent from the provided tag set.
    #[error("tag {tag:?} is not in the tag set")]
    UnknownTag { tag: String },
    /// The JSON file is not a tokenizer file of a supported version.
    #[error("unsupported tokenizer file: {0}")]
    UnsupportedFile(String),
    /// The JSON file is internally inconsistent.
    #[error("corrupt tokenizer file: {0}")]
    CorruptFile(String),
    /// JSON (de)serialisation failure.
    #[error("tokenizer JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

/// How [`Tokenizer::encode_words`] treats sentences longer than `max_len`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LengthMode {
    /// Overflow is an error.
    Strict,
    /// Whole trailing words are dropped until the sentence fits.
    Truncate,
}

/// One encoded sentence, padded to a fixed length.
///
/// Layout: `[CLS] subwords… [SEP] [PAD]…`, with `ids.len() == max_len`.
/// `attention_mask` is 1 for `[CLS]`, subwords, and `[SEP]`, 0 for padding.
/// `word_starts[i]` is the position of word `i`'s first subword.
/// `label_ids` (present only for tagged encodings) holds the tag id at each
/// word's first subword and [`IGNORE_LABEL`] everywhere else.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Encoding {
    pub ids: Vec<u32>,
    pub attention_mask: Vec<u8>,
    pub word_starts: Vec<usize>,
    pub label_ids: Option<Vec<i32>>,
}

impl Encoding {
    /// Number of non-padding positions (`[CLS]` + subwords + `[SEP]`).
    pub fn real_len(&self) -> usize {
        self.attention_mask.iter().map(|&m| m as usize).sum()
    }
}

/// A trained BPE subword tokenizer.
///
/// The vocabulary is fully determined by the alphabet and the ordered merge
/// list: ids are specials `0..5`, then the alphabet in lexicographic order,
/// then merge products in merge order.
#[derive(Debug, Clone, PartialEq)]
pub struct Tokenizer {
    vocab: Vec<String>,
    ids: HashMap<String, u32>,
    merges: Vec<(String, String)>,
    alphabet: BTreeSet<String>,
}

#[derive(Serialize, Deserialize)]
struct TokenizerFile {
    format: String,
    version: u32,
    alphabet: Vec<String>,
    merges: Vec<(String, String)>,
}

/// A symbol strips its `##` continuation prefix for ordering and merging.
fn strip_cont(symbol: &str) -> &str {
    symbol.strip_prefix("##").unwrap_or(symbol)
}

/// Product of merging two adjacent symbols; the left symbol keeps its
/// word-initial/continuation status.
fn merge_product(left: &str, right: &str) -> String {
    format!("{left}{}", strip_cont(right))
}

/// Splits a word into character symbols: first character plain, the rest
/// `##`-prefixed.
fn word_symbols(word: &str) -> Vec<String> {
    word.chars()
        .enumerate()
        .map(|(i, c)| if i == 0 { c.to_string() } else { format!("##{c}") })
        .collect()
}

/// Merges every adjacent `(left, right)` occurrence in-place, left to right,
/// non-overlapping.
fn apply_merge(symbols: &mut Vec<String>, left: &str, right: &str, product: &str) {
    let mut i = 0;
    while i + 1 < symbols.len() {
        if symbols[i] == left && symbols[i + 1] == right {
            symbols[i] = product.to_string();
            symbols.remove(i + 1);
        }
        i += 1;
    }
}

/// Trains a BPE tokenizer on whitespace-tokenised texts.
///
/// Merging is greedy on pair frequency (weighted by word frequency); ties
/// break towards the lexicographically smallest pair, comparing the symbols'
/// underlying text first (continuation prefixes are presentation, not
/// identity). Merging stops when the vocabulary is full or no pair reaches
/// `min_frequency`.
pub fn train_bpe<S: AsRef<str>>(
    texts: &[S],
    vocab_size: usize,
    min_frequency: usize,
) -> Result<Tokenizer, TokenizerError> {
    let mut word_freq: BTreeMap<String, usize> = BTreeMap::new();
    for text in texts {
        for word in text.as_ref().split_whitespace() {
            *word_freq.entry(word.to_string()).or_insert(0) += 1;
        }
    }
    if word_freq.is_empty() {
        return Err(TokenizerError::EmptyCorpus);
    }

    let alphabet: BTreeSet<String> = word_freq
        .keys()
        .flat_map(|word| word_symbols(word))
        .collect();
    let base_size = SPECIAL_TOKENS.len() + alphabet.len();
    if vocab_size < base_size {
        return Err(TokenizerError::VocabTooSmall { requested: vocab_size, needed: base_size });
    }

    let mut sequences: Vec<(Vec<String>, usize)> = word_freq
        .iter()
        .map(|(word, &freq)| (word_symbols(word), freq))
        .collect();

    let mut merges: Vec<(String, String)> = Vec::new();
    while base_size + merges.len() < vocab_size {
        let mut pair_counts: HashMap<(String, String), usize> = HashMap::new();
        for (symbols, freq) in &sequences {
            for pair in symbols.windows(2) {
                *pair_counts
                    .entry((pair[0].clone(), pair[1].clone()))
                    .or_insert(0) += freq;
            }
        }

        // Highest count wins; ties go to the smallest pair under
        // ((text(l), text(r)), (l, r)) so the choice is total and stable.
        let mut best: Option<(usize, (String, String))> = None;
        for ((left, right), &count) in &pair_counts {
            let better = match &best {
                None => true,
                Some((best_count, (bl, br))) => {
                    let key = (strip_cont(left), strip_cont(right), left.as_str(), right.as_str());
                    let best_key = (strip_cont(bl), strip_cont(br), bl.as_str(), br.as_str());
                    count > *best_count || (count == *best_count && key < best_key)
                }
            };
            if better {
                best = Some((count, (left.clone(), right.clone())));
            }
        }
        let Some((count, (left, right))) = best else { break };
        if count < min_frequency {
            break;
        }

        let product = merge_product(&left, &right);
        for (symbols, _) in &mut sequences {
            apply_merge(symbols, &left, &right, &product);
        }
        merges.push((left, right));
    }

    Ok(Tokenizer::assemble(alphabet, merges))
}

impl Tokenizer {
    /// Builds the canonical vocabulary from an alphabet and a merge list.
    fn assemble(alphabet: BTreeSet<String>, merges: Vec<(String, String)>) -> Tokenizer {
        let mut vocab: Vec<String> = SPECIAL_TOKENS.iter().map(|t| t.to_string()).collect();
        vocab.extend(alphabet.iter().cloned());
        for (left, right) in &merges {
            let product = merge_product(left, right);
            if !vocab.contains(&product) {
                vocab.push(product);
            }
        }
        let ids = vocab
            .iter()
            .enumerate()
            .map(|(id, token)| (token.clone(), id as u32))
            .collect();
        Tokenizer { vocab, ids, merges, alphabet }
    }

    /// Total number of tokens (specials + alphabet + merge products).
    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    /// Token string for an id, if in range.
    pub fn token(&self, id: u32) -> Option<&str> {
        self.vocab.get(id as usize).map(String::as_str)
    }

    /// Id for a token string, if known.
    pub fn id_of(&self, token: &str) -> Option<u32> {
        self.ids.get(token).copied()
    }

    /// The ordered merge list.
    pub fn merges(&self) -> &[(String, String)] {
        &self.merges
    }

    /// The base character symbols.
    pub fn alphabet(&self) -> &BTreeSet<String> {
        &self.alphabet
    }

    /// Encodes one word into subword ids by applying the merges in learned
    /// order. Characters outside the alphabet become one `[UNK]` each, and
    /// merges never cross an unknown character.
    pub fn encode_word(&self, word: &str) -> Vec<u32> {
        const UNKNOWN: &str = "\u{0}unk";
        let mut symbols: Vec<String> = word_symbols(word)
            .into_iter()
            .map(|s| {
                if self.alphabet.contains(&s) {
                    s
                } else {
                    UNKNOWN.to_string()
                }
            })
            .collect();
        for (left, right) in &self.merges {
            let product = merge_product(left, right);
            apply_merge(&mut symbols, left, right, &product);
        }
        symbols
            .iter()
            .map(|s| if s == UNKNOWN { UNK_ID } else { self.ids[s] })
            .collect()
    }

    /// Reassembles a word (or word sequence) from subword ids, dropping the
    /// continuation prefixes. Special tokens render as their `[...]` names;
    /// word-initial pieces after the first are separated by spaces.
    pub fn decode_pieces(&self, ids: &[u32]) -> String {
        let mut out = String::new();
        for &id in ids {
            let token = self.token(id).unwrap_or(UNK_TOKEN);
            match token.strip_prefix("##") {
                Some(rest) => out.push_str(rest),
                None => {
                    if !out.is_empty() {
                        out.push(' ');
                    }
                    out.push_str(token);
                }
            }
        }
        out
    }

    /// Encodes an untagged word sequence into a fixed-length [`Encoding`].
    pub fn encode_words<S: AsRef<str>>(
        &self,
        words: &[S],
        max_len: usize,
        mode: LengthMode,
    ) -> Result<Encoding, TokenizerError> {
        self.encode_inner(words, None, max_len, mode)
    }

    /// Encodes a tagged sentence, aligning tag ids to first subwords.
    ///
    /// Sentence tags must all be present in `tagset`. In `Truncate` mode the
    /// labels of dropped words are dropped with them.
    pub fn encode_tagged(
        &self,
        sentence: &TaggedSentence,
        tagset: &TagSet,
        max_len: usize,
        mode: LengthMode,
    ) -> Result<Encoding, TokenizerError> {
        let mut tag_ids = Vec::with_capacity(sentence.len());
        for tag in sentence.tags() {
            let id = tagset
                .id_of(tag)
                .ok_or_else(|| TokenizerError::UnknownTag { tag: tag.to_string() })?;
            tag_ids.push(id as i32);
        }
        self.encode_inner(sentence.words(), Some(&tag_ids), max_len, mode)
    }

    fn encode_inner<S: AsRef<str>>(
        &self,
        words: &[S],
        tag_ids: Option<&[i32]>,
        max_len: usize,
        mode: LengthMode,
    ) -> Result<Encoding, TokenizerError> {
        if words.is_empty() {
            return Err(TokenizerError::EmptySentence);
        }
        if max_len < 3 {
            return Err(TokenizerError::MaxLenTooSmall(max_len));
        }
        let mut pieces: Vec<Vec<u32>> = Vec::with_capacity(words.len());
        for word in words {
            let word = word.as_ref();
            if word.is_empty() || word.chars().any(char::is_whitespace) {
                return Err(TokenizerError::InvalidWord { word: word.to_string() });
            }
            pieces.push(self.encode_word(word));
        }

        // Keep as many whole words as fit beside [CLS] and [SEP].
        let mut kept = 0;
        let mut subwords = 0;
        for piece in &pieces {
            if 2 + subwords + piece.len() <= max_len {
                subwords += piece.len();
                kept += 1;
            } else {
                break;
            }
        }
        if kept < words.len() && mode == LengthMode::Strict {
            let needed = 2 + pieces.iter().map(Vec::len).sum::<usize>();
            return Err(TokenizerError::SentenceTooLong { needed, max_len });
        }
        if kept == 0 {
            return Err(TokenizerError::WordTooLong {
                word: words[0].as_ref().to_string(),
                max_len,
            });
        }

        let mut ids = Vec::with_capacity(max_len);
        let mut labels = tag_ids.map(|_| Vec::with_capacity(max_len));
        let mut word_starts = Vec::with_capacity(kept);
        ids.push(CLS_ID);
        if let Some(l) = labels.as_mut() {
            l.push(IGNORE_LABEL);
        }
        for (word_idx, piece) in pieces.iter().take(kept).enumerate() {
            word_starts.push(ids.len());
            for (sub_idx, &id) in piece.iter().enumerate() {
                ids.push(id);
                if let Some(l) = labels.as_mut() {
                    l.push(if sub_idx == 0 { tag_ids.unwrap()[word_idx] } else { IGNORE_LABEL });
                }
            }
        }
        ids.push(SEP_ID);
        if let Some(l) = labels.as_mut() {
            l.push(IGNORE_LABEL);
        }
        let real_len = ids.len();
        ids.resize(max_len, PAD_ID);
        if let Some(l) = labels.as_mut() {
            l.resize(max_len, IGNORE_LABEL);
        }
        let mut attention_mask = vec![1u8; real_len];
        attention_mask.resize(max_len, 0);

        Ok(Encoding { ids, attention_mask, word_starts, label_ids: labels })
    }

    /// Canonical JSON serialisation (alphabet + ordered merges).
    pub fn to_json(&self) -> String {
        let file = TokenizerFile {
            format: FILE_FORMAT.to_string(),
            version: FILE_VERSION,
            alphabet: self.alphabet.iter().cloned().collect(),
            merges: self.merges.clone(),
        };
        serde_json::to_string_pretty(&file).expect("tokenizer serialisation cannot fail") + "\n"
    }

    /// Parses and validates a tokenizer from its JSON form.
    pub fn from_json(text: &str) -> Result<Tokenizer, TokenizerError> {
        let file: TokenizerFile = serde_json::from_str(text)?;
        if file.format != FILE_FORMAT {
            return Err(TokenizerError::UnsupportedFile(format!(
                "format {:?}, expected {FILE_FORMAT:?}",
                file.format
            )));
        }
        if file.version != FILE_VERSION {
            return Err(TokenizerError::UnsupportedFile(format!(
                "version {}, expected {FILE_VERSION}",
                file.version
            )));
        }
        let alphabet: BTreeSet<String> = file.alphabet.into_iter().collect();
        if alphabet.iter().any(|s| strip_cont(s).is_empty()) {
            return Err(TokenizerError::CorruptFile("empty alphabet symbol".to_string()));
        }
        // Every merge operand must be an alphabet symbol or an earlier product.
        let mut known: BTreeSet<String> = alphabet.clone();
        for (left, right) in &file.merges {
            if !known.contains(left) || !known.contains(right) {
                return Err(TokenizerError::CorruptFile(format!(
                    "merge ({left:?}, {right:?}) references unknown symbols"
                )));
            }
            known.insert(merge_product(left, right));
        }
        Ok(Tokenizer::assemble(alphabet, file.merges))
    }

    /// Hex SHA-256 of the canonical JSON form; stored inside model files so
    /// a model can verify it is paired with the right tokenizer.
    pub fn sha256_hex(&self) -> String {
        let digest = Sha256::digest(self.to_json().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}
