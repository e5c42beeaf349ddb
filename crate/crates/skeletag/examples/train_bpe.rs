//! Trains a byte-pair-encoding tokenizer on the bundled corpus and shows
//! how words decompose into subwords.
//!
//! ```sh
//! cargo run --example train_bpe
//! ```

use skeletag::corpus::sample_corpus;
use skeletag::tokenizer::{train_bpe, LengthMode};

fn main() {
    let corpus = sample_corpus();
    let texts: Vec<String> = corpus
        .sentences
        .iter()
        .map(|s| s.words().join(" "))
        .collect();

    // Target 300 tokens, stop merging once no pair repeats.
    let tok = train_bpe(&texts, 300, 2).expect("corpus is non-empty");
    println!(
        "vocabulary: {} tokens ({} base characters, {} merges)",
        tok.vocab_size(),
        tok.alphabet().len(),
        tok.merges().len()
    );
    println!("first merges learned:");
    for (left, right) in tok.merges().iter().take(8) {
        println!("  {left} + {right}");
    }

    // Encode a sentence and line the pieces up under their words.
    let words = ["мама", "мыла", "раму", "вчера"];
    let enc = tok
        .encode_words(&words, 32, LengthMode::Strict)
        .expect("short sentence fits");
    println!("\nencoding of {:?}:", words.join(" "));
    let pieces: Vec<&str> = enc
        .ids
        .iter()
        .map(|&id| tok.token(id).expect("ids come from this vocabulary"))
        .collect();
    println!("  pieces: {pieces:?}");
    println!("  word starts at positions {:?}", enc.word_starts);

    // Unknown characters never fail: each becomes one [UNK].
    let enc = tok
        .encode_words(&["x∅y"], 32, LengthMode::Strict)
        .expect("unknowns map to [UNK]");
    let pieces: Vec<&str> = enc
        .ids
        .iter()
        .map(|&id| tok.token(id).expect("ids come from this vocabulary"))
        .collect();
    println!("\nunknown characters: \"x∅y\" -> {pieces:?}");

    // Round-trip through JSON preserves behaviour bit for bit.
    let restored = skeletag::tokenizer::Tokenizer::from_json(&tok.to_json())
        .expect("just-serialised tokenizer parses");
    assert_eq!(restored.sha256_hex(), tok.sha256_hex());
    println!("\nserialised fingerprint: {}", &tok.sha256_hex()[..16]);
}
