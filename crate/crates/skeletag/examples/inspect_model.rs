//! The model container format: save a model, read its metadata without
//! touching the weights, reload it, and confirm the round trip is exact.
//!
//! ```sh
//! cargo run --example inspect_model
//! ```

use skeletag::corpus::{sample_corpus, tagset_of};
use skeletag::model::{
    forward, init_model, load_model, read_metadata, save_model, ForwardMode, ModelConfig,
};
use skeletag::tokenizer::{train_bpe, LengthMode};

fn main() {
    let corpus = sample_corpus();
    let tagset = tagset_of(&corpus);
    let texts: Vec<String> = corpus.sentences.iter().map(|s| s.words().join(" ")).collect();
    let tok = train_bpe(&texts, 300, 2).expect("corpus is non-empty");

    let config = ModelConfig {
        max_len: 32,
        d_model: 32,
        n_heads: 2,
        n_layers: 1,
        d_ff: 64,
        ..ModelConfig::desk(tok.vocab_size(), tagset.len(), 7)
    };
    let params = init_model(&config).expect("config is valid");

    let dir = std::env::temp_dir().join("skeletag-inspect-example");
    std::fs::create_dir_all(&dir).expect("temp dir is writable");
    let path = dir.join("demo.sktg");
    save_model(&path, &params, &tagset, &tok.sha256_hex()).expect("model saves");
    let bytes = std::fs::metadata(&path).expect("file exists").len();
    println!("wrote {} ({bytes} bytes)", path.display());

    // Metadata only — configuration, tag inventory, tokenizer fingerprint,
    // and the tensor manifest — without loading any weights.
    let meta = read_metadata(&path).expect("container is well-formed");
    println!(
        "\nconfig: d_model {}, {} layers, {} heads, vocabulary {}, {} tags",
        meta.config.d_model,
        meta.config.n_layers,
        meta.config.n_heads,
        meta.config.vocab_size,
        meta.config.n_tags
    );
    println!("tags: {}", meta.tags.join(" "));
    println!("tokenizer fingerprint: {}…", &meta.tokenizer_sha256[..16]);
    println!("tensor manifest ({} tensors):", meta.tensors.len());
    for tensor in meta.tensors.iter().take(6) {
        println!(
            "  {:<28} {:>5} × {:<4} at byte {}",
            tensor.name, tensor.rows, tensor.cols, tensor.offset
        );
    }
    let total: usize = meta.tensors.iter().map(|t| t.rows * t.cols).sum();
    println!("  … {total} parameters in all");

    // Reload and compare logits on a real sentence: parameters are stored
    // as f32, and the in-memory model is f32-quantised after every update,
    // so the round trip is exact, not merely close.
    let loaded = loaded_model(&path);
    let enc = tok
        .encode_words(&["мама", "мыла", "раму"], 32, LengthMode::Strict)
        .expect("short sentence fits");
    let before = forward(&params, &[enc.clone()], ForwardMode::Eval).expect("forward pass succeeds");
    let after = forward(&loaded, &[enc], ForwardMode::Eval).expect("forward pass succeeds");
    assert_eq!(before, after);
    println!("\nreloaded model reproduces the original logits exactly");

    std::fs::remove_file(&path).ok();
}

fn loaded_model(path: &std::path::Path) -> skeletag::model::ModelParams {
    let loaded = load_model(path).expect("container loads");
    assert_eq!(loaded.tagset.len(), loaded.params.config.n_tags);
    loaded.params
}
