//! Expands sentences into sliding-window fragments and verifies the
//! count law: a sentence of n words yields n·(n+1)/2 fragments when every
//! window size is allowed.
//!
//! ```sh
//! cargo run --example augment_windows
//! ```

use skeletag::augment::{augment_corpus, windows, WindowSpec};
use skeletag::corpus::sample_corpus;

fn main() {
    let corpus = sample_corpus();
    let sentence = &corpus.sentences[0];
    println!(
        "sentence: {:?} ({} words)",
        sentence.words().join(" "),
        sentence.len()
    );

    let all = WindowSpec::new(1, None, false).expect("1..=full is a valid range");
    let fragments = windows(sentence, &all);
    let n = sentence.len();
    assert_eq!(fragments.len(), n * (n + 1) / 2);
    println!("all {} fragments:", fragments.len());
    for fragment in &fragments {
        println!("  {}", fragment.words().join(" "));
    }

    // Restricting the size range keeps only mid-sized fragments.
    let mid = WindowSpec::new(2, Some(3), false).expect("2..=3 is a valid range");
    println!(
        "\nwindows of size 2..=3 only: {} fragments",
        windows(sentence, &mid).len()
    );

    // Corpus-wide expansion, with and without duplicate removal.
    let plain = augment_corpus(&corpus, &all);
    let dedup_spec = WindowSpec::new(1, None, true).expect("same range, dedup on");
    let deduped = augment_corpus(&corpus, &dedup_spec);
    let total: usize = corpus.sentences.iter().map(|s| { let n = s.len(); n * (n + 1) / 2 }).sum();
    assert_eq!(plain.len(), total);
    println!(
        "\ncorpus of {} sentences -> {} fragments ({} after removing duplicates)",
        corpus.len(),
        plain.len(),
        deduped.len()
    );
}
