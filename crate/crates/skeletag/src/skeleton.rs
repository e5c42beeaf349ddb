//! Skeletal part-of-speech structure extraction.
//!
//! A *skeleton* is a sentence reduced to its ordered part-of-speech
//! backbone: each word is replaced by its tag name, except words whose tag
//! is in a configurable retention set, which keep their surface form. With
//! an empty retention set the skeleton is the pure tag sequence; with all
//! tags retained it is the original sentence.

use std::collections::BTreeSet;

use thiserror::Error;

use crate::corpus::{Tag, TagSet, TaggedSentence};
use crate::model::{predict_tags, ModelError, ModelParams};
use crate::tokenizer::Tokenizer;

/// Errors produced by skeleton extraction.
#[derive(Debug, Error)]
pub enum SkeletonError {
    /// The text contains no sentences (empty or whitespace only).
    #[error("no sentences in the input text")]
    EmptyInput,
    /// A retention tag outside the model's tag set.
    #[error("keep-lexical tag {tag:?} is not in the tag set")]
    UnknownKeepTag { tag: String },
    /// Tagging failed.
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// How to project a tagged sentence onto its skeleton.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SkeletonConfig {
    /// Words carrying these tags keep their surface form.
    pub keep_lexical: BTreeSet<Tag>,
    /// Joins the output tokens (default: a single space).
    pub separator: String,
}

impl Default for SkeletonConfig {
    fn default() -> SkeletonConfig {
        SkeletonConfig { keep_lexical: BTreeSet::new(), separator: " ".to_string() }
    }
}

impl SkeletonConfig {
    /// Checks every retention tag is in `tagset`.
    pub fn validate_against(&self, tagset: &TagSet) -> Result<(), SkeletonError> {
        for tag in &self.keep_lexical {
            if tagset.id_of(tag).is_none() {
                return Err(SkeletonError::UnknownKeepTag { tag: tag.to_string() });
            }
        }
        Ok(())
    }
}

/// Projects one tagged sentence onto its skeleton: position-preserving,
/// word `i` emits its surface form if its tag is retained and the tag name
/// otherwise. Deterministic and independent of any model.
pub fn extract_skeleton(sentence: &TaggedSentence, config: &SkeletonConfig) -> String {
    sentence
        .words()
        .iter()
        .zip(sentence.tags())
        .map(|(word, tag)| {
            if config.keep_lexical.contains(tag) {
                word.clone()
            } else {
                tag.to_string()
            }
        })
        .collect::<Vec<String>>()
        .join(&config.separator)
}

/// Skeletons for raw text plus the (1-based) numbers of skipped lines.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SkeletonOutput {
    /// One skeleton per non-blank input line, in input order.
    pub skeletons: Vec<String>,
    /// Line numbers of blank / whitespace-only lines, for caller warnings.
    pub skipped_lines: Vec<usize>,
}

/// End-to-end skeleton extraction from raw text: one sentence per line,
/// words split on whitespace, tags predicted by the model, then projected
/// with [`extract_skeleton`]. Blank lines are skipped and reported; text
/// with no sentences at all is an error.
pub fn skeletonize_text(
    params: &ModelParams,
    tokenizer: &Tokenizer,
    tagset: &TagSet,
    raw_text: &str,
    config: &SkeletonConfig,
) -> Result<SkeletonOutput, SkeletonError> {
    config.validate_against(tagset)?;
    let mut skeletons = Vec::new();
    let mut skipped_lines = Vec::new();
    for (idx, line) in raw_text.lines().enumerate() {
        let words: Vec<&str> = line.split_whitespace().collect();
        if words.is_empty() {
            skipped_lines.push(idx + 1);
            continue;
        }
        let tagged = predict_tags(params, tokenizer, tagset, &words)?;
        skeletons.push(extract_skeleton(&tagged, config));
    }
    if skeletons.is_empty() {
        return Err(SkeletonError::EmptyInput);
    }
    Ok(SkeletonOutput { skeletons, skipped_lines })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::parse_conll;
    use crate::model::{init_model, ModelConfig};
    use crate::tokenizer::train_bpe;

    fn tag(name: &str) -> Tag {
        Tag::new(name).unwrap()
    }

    fn mama() -> TaggedSentence {
        parse_conll("мама\tNOUN\nмыла\tVERB\nраму\tNOUN\n")
            .unwrap()
            .sentences
            .remove(0)
    }

    #[test]
    fn pure_tag_projection() {
        let skeleton = extract_skeleton(&mama(), &SkeletonConfig::default());
        assert_eq!(skeleton, "NOUN VERB NOUN");
    }

    #[test]
    fn retained_tags_keep_their_words() {
        let config = SkeletonConfig {
            keep_lexical: BTreeSet::from([tag("VERB")]),
            ..SkeletonConfig::default()
        };
        assert_eq!(extract_skeleton(&mama(), &config), "NOUN мыла NOUN");
    }

    #[test]
    fn single_word_sentence_is_its_tag() {
        let sentence = parse_conll("ой\tINTJ\n").unwrap().sentences.remove(0);
        assert_eq!(extract_skeleton(&sentence, &SkeletonConfig::default()), "INTJ");
    }

    #[test]
    fn retaining_every_tag_is_the_identity() {
        let sentence = mama();
        let config = SkeletonConfig {
            keep_lexical: BTreeSet::from([tag("NOUN"), tag("VERB")]),
            ..SkeletonConfig::default()
        };
        assert_eq!(extract_skeleton(&sentence, &config), sentence.words().join(" "));
    }

    #[test]
    fn output_token_count_preserves_positions() {
        let sentence = mama();
        for keep in [BTreeSet::new(), BTreeSet::from([tag("NOUN")])] {
            let config = SkeletonConfig { keep_lexical: keep, ..SkeletonConfig::default() };
            let skeleton = extract_skeleton(&sentence, &config);
            assert_eq!(skeleton.split(' ').count(), sentence.len());
        }
    }

    #[test]
    fn custom_separator() {
        let config = SkeletonConfig { separator: "|".to_string(), ..SkeletonConfig::default() };
        assert_eq!(extract_skeleton(&mama(), &config), "NOUN|VERB|NOUN");
    }

    #[test]
    fn validate_rejects_unknown_retention_tags() {
        let tagset = TagSet::from_tags([tag("NOUN"), tag("VERB")]);
        let config = SkeletonConfig {
            keep_lexical: BTreeSet::from([tag("XPOS")]),
            ..SkeletonConfig::default()
        };
        assert!(matches!(
            config.validate_against(&tagset),
            Err(SkeletonError::UnknownKeepTag { tag }) if tag == "XPOS"
        ));
        assert!(SkeletonConfig::default().validate_against(&tagset).is_ok());
    }

    fn demo_model() -> (ModelParams, Tokenizer, TagSet) {
        let tok = train_bpe(&["аб вг де"], 60, 1).unwrap();
        let tagset = TagSet::from_tags([tag("NOUN"), tag("VERB")]);
        let config = ModelConfig {
            vocab_size: tok.vocab_size(),
            max_len: 16,
            d_model: 8,
            n_heads: 2,
            n_layers: 1,
            d_ff: 16,
            n_tags: 2,
            dropout_rate: 0.0,
            seed: 3,
        };
        (init_model(&config).unwrap(), tok, tagset)
    }

    #[test]
    fn skeletonize_text_line_handling() {
        let (params, tok, tagset) = demo_model();
        let config = SkeletonConfig::default();
        let text = "аб вг\n\n   \nде\n";
        let out = skeletonize_text(&params, &tok, &tagset, text, &config).unwrap();
        assert_eq!(out.skeletons.len(), 2, "one skeleton per non-blank line");
        assert_eq!(out.skipped_lines, vec![2, 3]);
        // Position preservation per line, and only tag names appear.
        assert_eq!(out.skeletons[0].split(' ').count(), 2);
        assert_eq!(out.skeletons[1].split(' ').count(), 1);
        for token in out.skeletons.iter().flat_map(|s| s.split(' ')) {
            assert!(token == "NOUN" || token == "VERB", "unexpected token {token}");
        }
        // Deterministic.
        let again = skeletonize_text(&params, &tok, &tagset, text, &config).unwrap();
        assert_eq!(out, again);
    }

    #[test]
    fn skeletonize_text_rejects_empty_input() {
        let (params, tok, tagset) = demo_model();
        let config = SkeletonConfig::default();
        for text in ["", "\n\n", "   \n\t\n"] {
            assert!(matches!(
                skeletonize_text(&params, &tok, &tagset, text, &config),
                Err(SkeletonError::EmptyInput)
            ));
        }
    }

    #[test]
    fn skeletonize_validates_retention_tags() {
        let (params, tok, tagset) = demo_model();
        let config = SkeletonConfig {
            keep_lexical: BTreeSet::from([tag("ADV")]),
            ..SkeletonConfig::default()
        };
        assert!(matches!(
            skeletonize_text(&params, &tok, &tagset, "аб", &config),
            Err(SkeletonError::UnknownKeepTag { .. })
        ));
    }
}
