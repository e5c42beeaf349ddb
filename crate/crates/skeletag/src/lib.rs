//! Desk-scale part-of-speech tagging for Russian (or any whitespace-tokenised
//! language), built from first principles:
//!
//! * [`corpus`] — two-column CoNLL-style TSV reading/writing, tag inventories,
//!   deterministic train/validation splits, and a bundled annotated sample.
//! * [`augment`] — sliding-window data augmentation that turns each sentence
//!   into every contiguous fragment within a size range.
//! * [`tokenizer`] — a from-scratch byte-pair-encoding subword tokenizer with
//!   `##` continuation pieces and subword-to-word label alignment.
//! * [`model`] — a compact BERT-style transformer encoder (token + position
//!   embeddings, multi-head self-attention, GELU feed-forward, layer norm)
//!   with a token-classification head, plus a binary model container.
//! * [`train`] — manual reverse-mode gradients, Adam, masked-language-model
//!   pretraining, and the supervised training loop with per-epoch validation.
//! * [`metrics`] — one-vs-rest confusion counts, per-class and
//!   support-weighted F1, and full evaluation reports.
//! * [`skeleton`] — collapses tagged sentences into skeletal part-of-speech
//!   structures, optionally keeping chosen lexical classes.
//! * [`cli`] — the `skeletag` command-line front end over all of the above.
//!
//! Everything is deterministic given a seed: training twice with the same
//! inputs produces byte-identical model files.
//!
//! # Quick start
//!
//! ```
//! use skeletag::corpus::{sample_corpus, split, tagset_of};
//! use skeletag::tokenizer::train_bpe;
//!
//! let corpus = sample_corpus();
//! let (train, val) = split(&corpus, 0.2, 7).unwrap();
//! assert_eq!(train.sentences.len() + val.sentences.len(), corpus.sentences.len());
//!
//! let texts: Vec<String> = train.sentences.iter()
//!     .map(|s| s.words().join(" "))
//!     .collect();
//! let tok = train_bpe(&texts, 2000, 2).unwrap();
//! assert!(tok.vocab_size() > 5);
//! let tags = tagset_of(&corpus);
//! assert_eq!(tags.len(), 14);
//! ```
//!
//! The `examples/` directory contains one runnable walk-through per
//! capability; `examples/train_tagger.rs` is the end-to-end tour.

pub mod augment;
pub mod cli;
pub mod corpus;
pub mod metrics;
pub mod model;
pub mod skeleton;
pub mod tokenizer;
pub mod train;
