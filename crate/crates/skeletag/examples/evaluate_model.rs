//! Metrics from first principles: one-vs-rest confusion counts, per-class
//! F1, support-weighted F1, and accuracy — shown on hand-checkable
//! predictions, no model involved.
//!
//! ```sh
//! cargo run --example evaluate_model
//! ```

use skeletag::corpus::{Tag, TagSet, TaggedSentence};
use skeletag::metrics::{
    accuracy, confusion_counts, f1_of_class, weighted_f1, EvalReport,
};

/// A sentence of placeholder words carrying the given tags.
fn sentence(tags: &[&str]) -> TaggedSentence {
    let words = (0..tags.len()).map(|i| format!("w{i}")).collect();
    let tags = tags.iter().map(|n| Tag::new(n).expect("valid tag name")).collect();
    TaggedSentence::new(words, tags).expect("words and tags line up")
}

fn main() {
    let tagset = TagSet::from_tags(
        ["ADJ", "NOUN", "VERB"].map(|n| Tag::new(n).expect("valid tag name")),
    );

    // Two sentences' worth of predictions against gold; shapes must match.
    let gold = vec![sentence(&["NOUN", "VERB", "NOUN"]), sentence(&["ADJ", "NOUN"])];
    let pred = vec![sentence(&["NOUN", "VERB", "VERB"]), sentence(&["NOUN", "NOUN"])];

    let counts = confusion_counts(&pred, &gold, &tagset).expect("shapes line up");
    println!("per-class one-vs-rest counts:");
    for tag in tagset.tags() {
        println!(
            "  {tag}: tp={} fp={} fn={} support={}",
            counts.tp(tag).expect("tag is in the set"),
            counts.fp(tag).expect("tag is in the set"),
            counts.fn_(tag).expect("tag is in the set"),
            counts.support(tag).expect("tag is in the set"),
        );
    }

    // Harmonic mean of precision and recall, one class at a time. A class
    // with no true positives scores zero by definition.
    println!("\nper-class F1:");
    for tag in tagset.tags() {
        println!(
            "  {tag}: {:.4}",
            f1_of_class(&counts, tag).expect("tag is in the set")
        );
    }

    // The headline number weights each class by its gold support, so rare
    // classes cannot dominate.
    println!(
        "\nweighted F1 {:.4}   accuracy {:.4}",
        weighted_f1(&counts).expect("gold has support"),
        accuracy(&counts).expect("gold is non-empty"),
    );

    // The same counts render as a full report (also what `evaluate` and the
    // CLI produce).
    let report = EvalReport::from_counts(&counts).expect("counts have support");
    println!("\n{report}");

    // A spot value worth memorising: tp=3, fp=1, fn=1 gives
    // F1 = 2·3 / (2·3 + 1 + 1) = 0.75 exactly.
    let one = TagSet::from_tags([Tag::new("X").expect("valid"), Tag::new("O").expect("valid")]);
    let gold = vec![sentence(&["X", "X", "X", "X", "O"])];
    let pred = vec![sentence(&["X", "X", "X", "O", "X"])];
    let counts = confusion_counts(&pred, &gold, &one).expect("shapes line up");
    let x = Tag::new("X").expect("valid tag name");
    let f1 = f1_of_class(&counts, &x).expect("X is in the set");
    assert_eq!(f1, 0.75);
    println!("tp=3 fp=1 fn=1  ->  F1 {f1}");
}
