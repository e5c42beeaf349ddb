//! Transfer learning harness: pretrain with the masked-language-model
//! objective on raw text, fine-tune the result on tags, and compare
//! against training from scratch under an identical budget.
//!
//! ```sh
//! cargo run --release --example pretrain_and_transfer
//! ```

use skeletag::corpus::{sample_corpus, split, tagset_of};
use skeletag::model::{init_model, ModelConfig};
use skeletag::tokenizer::train_bpe;
use skeletag::train::{pretrain_mlm, train_token_classifier, MlmConfig, TrainConfig};

fn main() {
    let corpus = sample_corpus();
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
        epochs: 15,
        batch_size: 16,
        learning_rate: 3e-3,
        seed: 7,
        ..TrainConfig::default()
    };

    // Pretraining sees words only — the tags stay untouched. 15% of
    // positions are corrupted (80% [MASK], 10% random, 10% kept) and the
    // model must reconstruct the originals.
    let sentences: Vec<Vec<String>> =
        train.sentences.iter().map(|s| s.words().to_vec()).collect();
    let mlm = MlmConfig { seed: 7, ..MlmConfig::default() };
    println!("pretraining on {} raw sentences…", sentences.len());
    let (pretrained, losses) =
        pretrain_mlm(&config, &tok, &sentences, &mlm, &budget).expect("pretraining succeeds");
    println!(
        "  MLM loss {:.4} -> {:.4} over {} epochs",
        losses.first().expect("at least one epoch"),
        losses.last().expect("at least one epoch"),
        losses.len()
    );

    // Fine-tune the pretrained encoder; train an identical fresh one.
    let (_, fine) = train_token_classifier(pretrained, &train, &val, &tok, &tagset, &budget)
        .expect("fine-tuning succeeds");
    let scratch_init = init_model(&config).expect("config is valid");
    let (_, scratch) = train_token_classifier(scratch_init, &train, &val, &tok, &tagset, &budget)
        .expect("training succeeds");

    println!("\nregime                       best val F1   best epoch");
    println!(
        "pretrained, then fine-tuned  {:>11.4}   {:>10}",
        fine.best_val_f1, fine.best_epoch
    );
    println!(
        "from scratch                 {:>11.4}   {:>10}",
        scratch.best_val_f1, scratch.best_epoch
    );
    println!("\n(both regimes share the tokenizer, split, seed, and budget)");
}
