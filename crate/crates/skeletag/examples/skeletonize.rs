//! Collapses sentences into skeletal part-of-speech structures: every
//! word becomes its predicted tag, except words in the "keep lexical"
//! classes, which keep their surface form.
//!
//! ```sh
//! cargo run --release --example skeletonize
//! ```

use std::collections::BTreeSet;

use skeletag::corpus::{sample_corpus, split, tagset_of, Tag};
use skeletag::model::{init_model, ModelConfig};
use skeletag::skeleton::{extract_skeleton, skeletonize_text, SkeletonConfig};
use skeletag::tokenizer::train_bpe;
use skeletag::train::{train_token_classifier, TrainConfig};

fn main() {
    // The projection itself needs no model — here it is on gold tags.
    let corpus = sample_corpus();
    let sentence = &corpus.sentences[0];
    println!("sentence : {}", sentence.words().join(" "));

    let pure = SkeletonConfig::default();
    println!("skeleton : {}", extract_skeleton(sentence, &pure));

    let keep_nouns = SkeletonConfig {
        keep_lexical: BTreeSet::from([Tag::new("NOUN").expect("valid tag name")]),
        ..SkeletonConfig::default()
    };
    println!("keep NOUN: {}", extract_skeleton(sentence, &keep_nouns));

    let arrows = SkeletonConfig { separator: " → ".to_string(), ..SkeletonConfig::default() };
    println!("arrows   : {}", extract_skeleton(sentence, &arrows));

    // End to end on raw text: train a small tagger, then skeletonize
    // unseen sentences with predicted tags.
    let (train, val) = split(&corpus, 0.2, 7).expect("corpus has plenty of sentences");
    let tagset = tagset_of(&corpus);
    let texts: Vec<String> = train.sentences.iter().map(|s| s.words().join(" ")).collect();
    let tok = train_bpe(&texts, 400, 2).expect("training half is non-empty");
    let config = ModelConfig {
        max_len: 32,
        d_model: 32,
        n_heads: 2,
        n_layers: 1,
        d_ff: 64,
        ..ModelConfig::desk(tok.vocab_size(), tagset.len(), 7)
    };
    let budget = TrainConfig {
        epochs: 20,
        batch_size: 16,
        learning_rate: 3e-3,
        seed: 7,
        ..TrainConfig::default()
    };
    let init = init_model(&config).expect("config is valid");
    let (model, _) = train_token_classifier(init, &train, &val, &tok, &tagset, &budget)
        .expect("training succeeds");

    let text = "мама мыла раму\nкошка тихо спит\n";
    let output = skeletonize_text(&model, &tok, &tagset, text, &keep_nouns)
        .expect("text has sentences");
    println!("\npredicted-tag skeletons (keeping NOUN):");
    for skeleton in &output.skeletons {
        println!("  {skeleton}");
    }
}
