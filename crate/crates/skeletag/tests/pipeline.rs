//! Property-based checks of the data-path invariants, plus an
//! integration test that chains every CLI subcommand in a temp directory
//! the way a real workflow would.

use std::collections::HashSet;
use std::fs;
use std::sync::OnceLock;

use proptest::prelude::*;

use skeletag::augment::{augment_corpus, WindowSpec};
use skeletag::corpus::{
    parse_conll, sample_corpus, write_conll, Corpus, Tag, TagSet, TaggedSentence,
};
use skeletag::model::softmax;
use skeletag::tokenizer::{
    train_bpe, LengthMode, Tokenizer, CLS_ID, IGNORE_LABEL, SEP_ID,
};

const TAG_POOL: [&str; 6] = ["NOUN", "VERB", "ADJ", "ADV", "PRON", "ADP"];

fn tag(name: &str) -> Tag {
    Tag::new(name).expect("test tag names are valid")
}

/// One tokenizer shared by all encoding cases; training it per case
/// would dominate the property's runtime.
fn shared_tokenizer() -> &'static Tokenizer {
    static TOK: OnceLock<Tokenizer> = OnceLock::new();
    TOK.get_or_init(|| {
        let corpus = sample_corpus();
        let texts: Vec<String> =
            corpus.sentences.iter().map(|s| s.words().join(" ")).collect();
        train_bpe(&texts, 300, 2).expect("the bundled corpus trains a tokenizer")
    })
}

prop_compose! {
    /// 1–8 Cyrillic words, each with a tag drawn from the fixed pool.
    fn arb_sentence()(
        pairs in prop::collection::vec(("[а-яё]{1,8}", 0..TAG_POOL.len()), 1..=8),
    ) -> TaggedSentence {
        let words = pairs.iter().map(|(w, _)| w.clone()).collect();
        let tags = pairs.iter().map(|&(_, t)| tag(TAG_POOL[t])).collect();
        TaggedSentence::new(words, tags).expect("generated sentences are well-formed")
    }
}

prop_compose! {
    fn arb_corpus()(
        sentences in prop::collection::vec(arb_sentence(), 1..=12),
    ) -> Corpus {
        Corpus::new(sentences, "generated")
    }
}

proptest! {
    /// Serialising any corpus and reading it back preserves every
    /// sentence, not just the bundled sample.
    #[test]
    fn writing_then_parsing_preserves_any_corpus(corpus in arb_corpus()) {
        let text = write_conll(&corpus).expect("generated corpora are non-empty");
        let parsed = parse_conll(&text).expect("own output parses");
        prop_assert_eq!(parsed.sentences, corpus.sentences);
    }

    /// Fragment counts match direct enumeration: a sentence of n words
    /// has n + 1 - k windows of size k, summed over the allowed sizes.
    #[test]
    fn window_counts_follow_the_enumeration_law(
        corpus in arb_corpus(),
        min in 1_usize..=3,
        span in prop::option::of(0_usize..=7),
    ) {
        let max = span.map(|s| min + s);
        let spec = WindowSpec::new(min, max, false).expect("min <= max by construction");
        let augmented = augment_corpus(&corpus, &spec);

        let expected: usize = corpus
            .sentences
            .iter()
            .map(|s| {
                let n = s.len();
                let cap = max.unwrap_or(n).min(n);
                (min..=cap).map(|k| n + 1 - k).sum::<usize>()
            })
            .sum();
        prop_assert_eq!(augmented.len(), expected);

        let cap = max.unwrap_or(usize::MAX);
        for fragment in &augmented.sentences {
            prop_assert!((min..=cap).contains(&fragment.len()));
        }
    }

    /// Deduplication keeps exactly one copy of each distinct
    /// (words, tags) fragment — checked against a set-based oracle.
    #[test]
    fn dedup_keeps_exactly_the_distinct_fragments(corpus in arb_corpus()) {
        let plain = WindowSpec::new(1, None, false).expect("full range is valid");
        let dedup = WindowSpec::new(1, None, true).expect("full range is valid");
        let all = augment_corpus(&corpus, &plain);
        let unique = augment_corpus(&corpus, &dedup);

        let distinct: HashSet<(Vec<String>, Vec<String>)> = all
            .sentences
            .iter()
            .map(|s| {
                let words = s.words().to_vec();
                let tags = s.tags().iter().map(|t| t.to_string()).collect();
                (words, tags)
            })
            .collect();
        prop_assert_eq!(unique.len(), distinct.len());
    }

    /// Softmax output is a probability distribution and never reorders
    /// the maximum.
    #[test]
    fn softmax_is_a_distribution_preserving_argmax(
        row in prop::collection::vec(-1e3_f64..1e3, 1..=16),
    ) {
        let out = softmax(&row);
        let sum: f64 = out.iter().sum();
        prop_assert!((sum - 1.0).abs() < 1e-9, "row sums to {sum}");
        prop_assert!(out.iter().all(|&p| (0.0..=1.0).contains(&p)));

        let arg = |xs: &[f64]| {
            xs.iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).expect("finite values"))
                .expect("non-empty row")
                .0
        };
        prop_assert_eq!(arg(&row), arg(&out));
    }

    /// Tagged encodings put each tag id at its word's first subword and
    /// the ignore marker everywhere else; the untagged twin is identical
    /// apart from the labels.
    #[test]
    fn encodings_align_labels_to_first_subwords(
        pairs in prop::collection::vec(("[а-яё]{1,10}", 0..TAG_POOL.len()), 1..=10),
    ) {
        const MAX_LEN: usize = 128; // ten 10-char words fit even split per character
        let tok = shared_tokenizer();
        let tagset = TagSet::from_tags(TAG_POOL.iter().map(|n| tag(n)));
        let words: Vec<String> = pairs.iter().map(|(w, _)| w.clone()).collect();
        let tags: Vec<Tag> = pairs.iter().map(|&(_, t)| tag(TAG_POOL[t])).collect();
        let sentence = TaggedSentence::new(words.clone(), tags.clone())
            .expect("generated sentences are well-formed");

        let enc = tok
            .encode_tagged(&sentence, &tagset, MAX_LEN, LengthMode::Strict)
            .expect("every word fits");
        let real = enc.real_len();

        prop_assert_eq!(enc.ids.len(), MAX_LEN);
        prop_assert_eq!(enc.attention_mask.len(), MAX_LEN);
        prop_assert_eq!(enc.ids[0], CLS_ID);
        prop_assert_eq!(enc.ids[real - 1], SEP_ID);
        prop_assert!(enc.attention_mask[..real].iter().all(|&m| m == 1));
        prop_assert!(enc.attention_mask[real..].iter().all(|&m| m == 0));

        prop_assert_eq!(enc.word_starts.len(), words.len());
        prop_assert_eq!(enc.word_starts[0], 1);
        for pair in enc.word_starts.windows(2) {
            prop_assert!(pair[0] < pair[1]);
        }
        prop_assert!(*enc.word_starts.last().expect("non-empty") < real - 1);

        let labels = enc.label_ids.clone().expect("tagged encodings carry labels");
        prop_assert_eq!(labels.len(), MAX_LEN);
        for (pos, &label) in labels.iter().enumerate() {
            match enc.word_starts.iter().position(|&s| s == pos) {
                Some(word_idx) => {
                    let want = tagset.id_of(&tags[word_idx]).expect("pool tag") as i32;
                    prop_assert_eq!(label, want, "word {} at position {}", word_idx, pos);
                }
                None => prop_assert_eq!(label, IGNORE_LABEL, "position {}", pos),
            }
        }

        let untagged = tok
            .encode_words(&words, MAX_LEN, LengthMode::Strict)
            .expect("same sentence, no tags");
        prop_assert_eq!(untagged.ids, enc.ids);
        prop_assert_eq!(untagged.attention_mask, enc.attention_mask);
        prop_assert_eq!(untagged.word_starts, enc.word_starts);
        prop_assert_eq!(untagged.label_ids, None);
    }
}

/// Every subcommand, chained: tokenize → augment → train (+ report and
/// sidecars) → pretrain → fine-tune → eval → tag → skeleton → inspect,
/// with spot checks on each artefact and on two failure exits.
#[test]
fn cli_subcommands_chain_into_a_full_workflow() {
    let dir = tempfile::tempdir().expect("temp dir");
    let path = |name: &str| {
        dir.path().join(name).to_str().expect("utf-8 temp path").to_owned()
    };
    let run = |args: &[&str]| {
        skeletag::cli::run(std::iter::once("skeletag").chain(args.iter().copied()))
    };

    let corpus = sample_corpus();
    let corpus_file = path("corpus.conll");
    fs::write(&corpus_file, write_conll(&corpus).expect("sample is non-empty"))
        .expect("write corpus");
    let raw_file = path("raw.txt");
    fs::write(&raw_file, "мама мыла раму\nкошка тихо спит\n").expect("write raw text");

    // Tokenizer.
    let tok_file = path("tok.json");
    assert_eq!(
        run(&["tokenizer-train", "--corpus", &corpus_file, "--vocab-size", "400",
              "--out", &tok_file]),
        0
    );

    // Augmentation; the written file obeys the same law the library does.
    let aug_file = path("augmented.conll");
    assert_eq!(
        run(&["augment", "--corpus", &corpus_file, "--window-min", "1",
              "--window-max", "4", "--out", &aug_file]),
        0
    );
    let augmented = parse_conll(&fs::read_to_string(&aug_file).expect("read augmented"))
        .expect("augmented output parses");
    let expected: usize = corpus
        .sentences
        .iter()
        .map(|s| {
            let n = s.len();
            (1..=n.min(4)).map(|k| n + 1 - k).sum::<usize>()
        })
        .sum();
    assert_eq!(augmented.len(), expected);

    // Supervised training with a report; sidecars appear next to the model.
    let model_file = path("model.sktg");
    let report_file = path("report.json");
    assert_eq!(
        run(&["train", "--corpus", &corpus_file, "--tokenizer", &tok_file,
              "--out", &model_file, "--report", &report_file,
              "--epochs", "2", "--max-len", "32", "--d-model", "16",
              "--n-heads", "2", "--n-layers", "1", "--d-ff", "32",
              "--seed", "9"]),
        0
    );
    assert!(fs::metadata(path("model.tokenizer.json")).is_ok(), "tokenizer sidecar");
    assert!(fs::metadata(path("model.history.jsonl")).is_ok(), "history sidecar");
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&report_file).expect("read report"))
            .expect("report is JSON");
    let f1 = report["weighted_f1"].as_f64().expect("weighted_f1 is a number");
    assert!((0.0..=1.0).contains(&f1), "weighted F1 {f1} out of range");
    assert!(
        !report["per_class"].as_array().expect("per_class is an array").is_empty(),
        "report lists per-class scores"
    );

    // MLM pretraining, then fine-tuning from the saved container
    // (architecture comes from the container, tokenizer from its sidecar).
    let pre_file = path("pretrained.sktg");
    assert_eq!(
        run(&["pretrain", "--corpus", &corpus_file, "--tokenizer", &tok_file,
              "--out", &pre_file, "--epochs", "1", "--max-len", "32",
              "--d-model", "16", "--n-heads", "2", "--n-layers", "1",
              "--d-ff", "32", "--seed", "9"]),
        0
    );
    let fine_file = path("finetuned.sktg");
    assert_eq!(
        run(&["train", "--corpus", &corpus_file, "--model", &pre_file,
              "--out", &fine_file, "--epochs", "1", "--seed", "9"]),
        0
    );

    // Evaluation against gold.
    let eval_file = path("eval.json");
    assert_eq!(
        run(&["eval", "--model", &model_file, "--corpus", &corpus_file,
              "--report", &eval_file]),
        0
    );
    let eval: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&eval_file).expect("read eval"))
            .expect("eval report is JSON");
    assert!(eval["accuracy"].as_f64().expect("accuracy is a number").is_finite());

    // Tagging raw text produces the same two-column TSV the reader accepts,
    // with the input's words preserved line for line.
    let tagged_file = path("tagged.tsv");
    assert_eq!(
        run(&["tag", "--model", &model_file, "--input", &raw_file,
              "--out", &tagged_file]),
        0
    );
    let tagged = parse_conll(&fs::read_to_string(&tagged_file).expect("read tagged"))
        .expect("tagged output parses");
    assert_eq!(tagged.len(), 2);
    assert_eq!(tagged.sentences[0].words(), ["мама", "мыла", "раму"]);
    assert_eq!(tagged.sentences[1].words(), ["кошка", "тихо", "спит"]);

    // Skeletons: one line in, one line out.
    let skel_file = path("skeletons.txt");
    assert_eq!(
        run(&["skeleton", "--model", &model_file, "--input", &raw_file,
              "--keep-lexical", "NOUN", "--out", &skel_file]),
        0
    );
    let skeletons = fs::read_to_string(&skel_file).expect("read skeletons");
    assert_eq!(skeletons.lines().count(), 2);
    assert!(skeletons.lines().all(|l| !l.trim().is_empty()));

    // Metadata without weights.
    assert_eq!(run(&["inspect", "--model", &model_file]), 0);

    // Failure paths keep their exit-code contract: bad or mismatched
    // inputs are 2, a model-side failure (here: divergence) is 3.
    assert_eq!(
        run(&["eval", "--model", &model_file, "--corpus", &path("missing.conll")]),
        2
    );
    let other_tok = path("other-tok.json");
    assert_eq!(
        run(&["tokenizer-train", "--corpus", &corpus_file, "--vocab-size", "120",
              "--out", &other_tok]),
        0
    );
    assert_eq!(
        run(&["eval", "--model", &model_file, "--corpus", &corpus_file,
              "--tokenizer", &other_tok]),
        2
    );
    assert_eq!(
        run(&["train", "--corpus", &corpus_file, "--tokenizer", &tok_file,
              "--out", &path("diverged.sktg"), "--epochs", "1", "--max-len", "32",
              "--d-model", "16", "--n-heads", "2", "--n-layers", "1",
              "--d-ff", "32", "--seed", "9", "--lr", "1e12"]),
        3
    );
}
