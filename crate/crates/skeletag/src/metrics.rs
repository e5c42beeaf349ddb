//! One-vs-rest evaluation metrics for tagging.
//!
//! For each class `a`, predictions are counted one-vs-rest at the word
//! level: a true positive where prediction and gold both say `a`, a false
//! positive where the prediction says `a` and the gold does not, a false
//! negative where the gold says `a` and the prediction does not. Per-class
//! F1 is `2·TP / (2·TP + FP + FN)` (defined as 0 when that denominator is
//! 0), and the corpus score is the support-weighted mean of per-class F1,
//! which keeps frequent classes from being drowned out by rare ones while
//! still counting every class.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Corpus, Tag, TagSet, TaggedSentence};
use crate::model::{predict_tags, ModelError, ModelParams};
use crate::tokenizer::Tokenizer;

/// Errors produced by metric computation and evaluation.
#[derive(Debug, Error)]
pub enum MetricsError {
    /// Predicted and gold sentence lists differ in shape.
    #[error("prediction/gold mismatch: {0}")]
    ShapeMismatch(String),
    /// A tag outside the tag set appeared in predictions or gold.
    #[error("tag {tag:?} is not in the tag set")]
    UnknownTag { tag: String },
    /// The tag requested for a per-class score is not in the tag set.
    #[error("no counts for tag {tag:?}")]
    UnknownClass { tag: String },
    /// Metrics over zero words are undefined.
    #[error("cannot compute metrics over zero words")]
    NoSupport,
    /// The model failed while producing predictions.
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Per-class one-vs-rest confusion counts over a prediction/gold pair.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassCounts {
    tagset: TagSet,
    tp: Vec<u64>,
    fp: Vec<u64>,
    fn_: Vec<u64>,
}

impl ClassCounts {
    fn class_index(&self, tag: &Tag) -> Result<usize, MetricsError> {
        self.tagset
            .id_of(tag)
            .ok_or_else(|| MetricsError::UnknownClass { tag: tag.to_string() })
    }

    pub fn tagset(&self) -> &TagSet {
        &self.tagset
    }

    pub fn tp(&self, tag: &Tag) -> Result<u64, MetricsError> {
        Ok(self.tp[self.class_index(tag)?])
    }

    pub fn fp(&self, tag: &Tag) -> Result<u64, MetricsError> {
        Ok(self.fp[self.class_index(tag)?])
    }

    pub fn fn_(&self, tag: &Tag) -> Result<u64, MetricsError> {
        Ok(self.fn_[self.class_index(tag)?])
    }

    /// Gold occurrences of the class: `TP + FN`.
    pub fn support(&self, tag: &Tag) -> Result<u64, MetricsError> {
        let i = self.class_index(tag)?;
        Ok(self.tp[i] + self.fn_[i])
    }

    /// Total number of compared words.
    pub fn total_words(&self) -> u64 {
        self.tp.iter().sum::<u64>() + self.fn_.iter().sum::<u64>()
    }

    fn correct_words(&self) -> u64 {
        self.tp.iter().sum()
    }
}

/// Counts one-vs-rest TP/FP/FN per class over aligned sentence lists.
///
/// `pred` and `gold` must have the same number of sentences with the same
/// number of words each; every tag on either side must be in `tagset`.
pub fn confusion_counts(
    pred: &[TaggedSentence],
    gold: &[TaggedSentence],
    tagset: &TagSet,
) -> Result<ClassCounts, MetricsError> {
    if pred.len() != gold.len() {
        return Err(MetricsError::ShapeMismatch(format!(
            "{} predicted sentences vs {} gold sentences",
            pred.len(),
            gold.len()
        )));
    }
    let k = tagset.len();
    let mut counts = ClassCounts {
        tagset: tagset.clone(),
        tp: vec![0; k],
        fp: vec![0; k],
        fn_: vec![0; k],
    };
    for (idx, (p, g)) in pred.iter().zip(gold).enumerate() {
        if p.len() != g.len() {
            return Err(MetricsError::ShapeMismatch(format!(
                "sentence {idx}: {} predicted words vs {} gold words",
                p.len(),
                g.len()
            )));
        }
        for (pt, gt) in p.tags().iter().zip(g.tags()) {
            let pi = tagset
                .id_of(pt)
                .ok_or_else(|| MetricsError::UnknownTag { tag: pt.to_string() })?;
            let gi = tagset
                .id_of(gt)
                .ok_or_else(|| MetricsError::UnknownTag { tag: gt.to_string() })?;
            if pi == gi {
                counts.tp[pi] += 1;
            } else {
                counts.fp[pi] += 1;
                counts.fn_[gi] += 1;
            }
        }
    }
    Ok(counts)
}

fn f1_from(tp: u64, fp: u64, fn_: u64) -> f64 {
    let denom = 2 * tp + fp + fn_;
    if denom == 0 {
        0.0
    } else {
        2.0 * tp as f64 / denom as f64
    }
}

fn ratio(num: u64, denom: u64) -> f64 {
    if denom == 0 {
        0.0
    } else {
        num as f64 / denom as f64
    }
}

/// One-vs-rest F1 of a single class: `2·TP / (2·TP + FP + FN)`, `0.0` when
/// the denominator is zero.
pub fn f1_of_class(counts: &ClassCounts, tag: &Tag) -> Result<f64, MetricsError> {
    let i = counts.class_index(tag)?;
    Ok(f1_from(counts.tp[i], counts.fp[i], counts.fn_[i]))
}

/// Support-weighted mean of per-class F1 over all classes with support.
///
/// Zero total support is an error.
pub fn weighted_f1(counts: &ClassCounts) -> Result<f64, MetricsError> {
    let mut weighted_sum = 0.0;
    let mut total_support = 0u64;
    for i in 0..counts.tagset.len() {
        let support = counts.tp[i] + counts.fn_[i];
        weighted_sum += support as f64 * f1_from(counts.tp[i], counts.fp[i], counts.fn_[i]);
        total_support += support;
    }
    if total_support == 0 {
        return Err(MetricsError::NoSupport);
    }
    Ok(weighted_sum / total_support as f64)
}

/// Word-level accuracy: correct words over total words.
pub fn accuracy(counts: &ClassCounts) -> Result<f64, MetricsError> {
    let total = counts.total_words();
    if total == 0 {
        return Err(MetricsError::NoSupport);
    }
    Ok(counts.correct_words() as f64 / total as f64)
}

/// One row of the per-class evaluation table.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ClassReport {
    pub tag: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

/// A full evaluation report: per-class table plus corpus-level scores.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct EvalReport {
    /// Rows sorted by tag name, one per tag-set class.
    pub per_class: Vec<ClassReport>,
    pub weighted_f1: f64,
    pub accuracy: f64,
    pub total_words: u64,
}

impl EvalReport {
    /// Builds the report from confusion counts.
    pub fn from_counts(counts: &ClassCounts) -> Result<EvalReport, MetricsError> {
        let mut per_class = Vec::with_capacity(counts.tagset.len());
        for (i, tag) in counts.tagset.tags().iter().enumerate() {
            let (tp, fp, fn_) = (counts.tp[i], counts.fp[i], counts.fn_[i]);
            per_class.push(ClassReport {
                tag: tag.to_string(),
                precision: ratio(tp, tp + fp),
                recall: ratio(tp, tp + fn_),
                f1: f1_from(tp, fp, fn_),
                support: tp + fn_,
            });
        }
        Ok(EvalReport {
            per_class,
            weighted_f1: weighted_f1(counts)?,
            accuracy: accuracy(counts)?,
            total_words: counts.total_words(),
        })
    }

    /// Pretty-printed JSON form (stable field order).
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialisation cannot fail") + "\n"
    }
}

impl std::fmt::Display for EvalReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "{:<8} {:>9} {:>9} {:>9} {:>9}", "tag", "precision", "recall", "f1", "support")?;
        for row in &self.per_class {
            writeln!(
                f,
                "{:<8} {:>9.4} {:>9.4} {:>9.4} {:>9}",
                row.tag, row.precision, row.recall, row.f1, row.support
            )?;
        }
        write!(
            f,
            "weighted F1 {:.4} | accuracy {:.4} | words {}",
            self.weighted_f1, self.accuracy, self.total_words
        )
    }
}

/// Runs the model over a validation corpus and scores word-level
/// predictions against the gold tags.
///
/// Predictions are taken at each word's first subword. If a sentence was
/// truncated at encoding time, only the surviving words are compared.
pub fn evaluate(
    params: &ModelParams,
    tokenizer: &Tokenizer,
    tagset: &TagSet,
    val: &Corpus,
) -> Result<EvalReport, MetricsError> {
    if val.is_empty() {
        return Err(MetricsError::NoSupport);
    }
    let mut pred = Vec::with_capacity(val.len());
    let mut gold = Vec::with_capacity(val.len());
    for sentence in &val.sentences {
        let predicted = predict_tags(params, tokenizer, tagset, sentence.words())?;
        let kept = predicted.len();
        if kept < sentence.len() {
            // Truncated: compare only the surviving prefix.
            gold.push(
                TaggedSentence::new(
                    sentence.words()[..kept].to_vec(),
                    sentence.tags()[..kept].to_vec(),
                )
                .expect("prefix of a valid sentence is valid"),
            );
        } else {
            gold.push(sentence.clone());
        }
        pred.push(predicted);
    }
    let counts = confusion_counts(&pred, &gold, tagset)?;
    EvalReport::from_counts(&counts)
}
