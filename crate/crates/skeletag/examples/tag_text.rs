//! Tags raw sentences with a freshly trained model: whole words go in,
//! `word<TAB>TAG` lines come out. Predictions are read at the first
//! subword of each word, mirroring how training aligns labels.
//!
//! ```sh
//! cargo run --release --example tag_text
//! ```

use skeletag::augment::{augment_corpus, WindowSpec};
use skeletag::corpus::{sample_corpus, split, tagset_of, write_conll, Corpus};
use skeletag::model::{init_model, predict_tags, ModelConfig};
use skeletag::tokenizer::train_bpe;
use skeletag::train::{train_token_classifier, TrainConfig};

fn main() {
    // Train a small tagger on the bundled corpus. Sliding-window
    // augmentation of the training half gives the short budget enough
    // repetition to settle the common words.
    let corpus = sample_corpus();
    let (train, val) = split(&corpus, 0.2, 7).expect("corpus has plenty of sentences");
    let tagset = tagset_of(&corpus);
    let texts: Vec<String> = train.sentences.iter().map(|s| s.words().join(" ")).collect();
    let tok = train_bpe(&texts, 400, 2).expect("training half is non-empty");
    let windows = WindowSpec::new(1, None, true).expect("full range is valid");
    let train = augment_corpus(&train, &windows);
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
    let (model, history) =
        train_token_classifier(init, &train, &val, &tok, &tagset, &budget)
            .expect("training succeeds");
    println!(
        "trained {} epochs (best val weighted F1 {:.4})\n",
        history.records.len(),
        history.best_val_f1
    );

    // Tag unseen text. Words the tokenizer has never met still work:
    // unknown characters fall back to [UNK] pieces.
    let lines = ["мама мыла раму", "кошка тихо спит", "это новый дом"];
    let mut tagged = Vec::new();
    for line in lines {
        let words: Vec<&str> = line.split_whitespace().collect();
        tagged.push(
            predict_tags(&model, &tok, &tagset, &words).expect("short sentences tag cleanly"),
        );
    }

    // The same two-column TSV the corpus reader consumes — so tagger
    // output can feed straight back into the pipeline.
    let out = Corpus::new(tagged, "tagged demo lines");
    print!("{}", write_conll(&out).expect("output is non-empty"));
}
