//! End-to-end tour: split the bundled corpus, train a BPE tokenizer and a
//! small transformer tagger, keep the best checkpoint, and score it.
//!
//! ```sh
//! cargo run --release --example train_tagger
//! ```

use skeletag::corpus::{sample_corpus, split, tagset_of};
use skeletag::metrics::evaluate;
use skeletag::model::{init_model, ModelConfig};
use skeletag::tokenizer::train_bpe;
use skeletag::train::{train_token_classifier, TrainConfig};

fn main() {
    // 1. Data: 100 annotated sentences, an 80/20 split, and the tag
    //    inventory of the whole corpus.
    let corpus = sample_corpus();
    let (train, val) = split(&corpus, 0.2, 7).expect("corpus has plenty of sentences");
    let tagset = tagset_of(&corpus);
    println!(
        "{} train / {} val sentences, {} tags",
        train.len(),
        val.len(),
        tagset.len()
    );

    // 2. Tokenizer: learned from the training half only.
    let texts: Vec<String> = train.sentences.iter().map(|s| s.words().join(" ")).collect();
    let tok = train_bpe(&texts, 400, 2).expect("training half is non-empty");
    println!("tokenizer: {} tokens", tok.vocab_size());

    // 3. Model: a deliberately small encoder so the example stays quick.
    let config = ModelConfig {
        max_len: 32,
        d_model: 32,
        n_heads: 2,
        n_layers: 1,
        d_ff: 64,
        dropout_rate: 0.1,
        ..ModelConfig::desk(tok.vocab_size(), tagset.len(), 7)
    };
    let init = init_model(&config).expect("config is valid");

    // 4. Train. The returned parameters are the epoch with the best
    //    validation weighted F1, not necessarily the last.
    let train_config = TrainConfig {
        epochs: 25,
        batch_size: 16,
        learning_rate: 3e-3,
        seed: 7,
        ..TrainConfig::default()
    };
    let (best, history) =
        train_token_classifier(init, &train, &val, &tok, &tagset, &train_config)
            .expect("training succeeds on the bundled corpus");
    for record in &history.records {
        println!(
            "epoch {:>2}  train loss {:.4}  val weighted F1 {:.4}",
            record.epoch, record.train_loss, record.val_weighted_f1
        );
    }
    println!(
        "best checkpoint: epoch {} (val weighted F1 {:.4})",
        history.best_epoch, history.best_val_f1
    );

    // 5. Full per-class report on the held-out sentences.
    let report = evaluate(&best, &tok, &tagset, &val).expect("validation set is scoreable");
    println!("\n{report}");
}
