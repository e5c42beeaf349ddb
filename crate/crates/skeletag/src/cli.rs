//! The `skeletag` command-line front end.
//!
//! Eight subcommands cover the full pipeline: `tokenizer-train`,
//! `augment`, `pretrain`, `train`, `eval`, `tag`, `skeleton`, and
//! `inspect`. Every option resolves with the precedence **command-line
//! flag > JSON config file (`--config`) > built-in default**, so a whole
//! run can live in one checked-in JSON file and still be overridden ad
//! hoc. Identical invocations with identical inputs and seeds produce
//! byte-identical model files and reports.
//!
//! Exit codes: `0` success, `1` usage error, `2` data/format error,
//! `3` model/numeric error.

use std::collections::BTreeSet;
use std::ffi::OsString;
use std::io::Read;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use crate::augment::{augment_corpus, WindowSpec};
use crate::corpus::{parse_conll, split, tagset_of, write_conll, Corpus, Tag, TagSet};
use crate::metrics::{evaluate, MetricsError};
use crate::model::{
    init_model, load_model, read_metadata, save_model, ModelConfig, ModelError, ModelParams,
};
use crate::skeleton::{skeletonize_text, SkeletonConfig, SkeletonError};
use crate::tokenizer::{train_bpe, LengthMode, Tokenizer, TokenizerError};
use crate::train::{
    pretrain_mlm, train_token_classifier, MlmConfig, TrainConfig, TrainError,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_MODEL: i32 = 3;

/// A CLI failure, already routed to its exit code.
#[derive(Debug)]
enum CliError {
    /// Missing/contradictory flags or invalid option values → exit 1.
    Usage(String),
    /// Unreadable, unparsable, or mismatched input files → exit 2.
    Data(String),
    /// Model or numeric failure → exit 3.
    Model(String),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(msg) | CliError::Data(msg) | CliError::Model(msg) => {
                write!(f, "{msg}")
            }
        }
    }
}

impl CliError {
    fn code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Data(_) => EXIT_DATA,
            CliError::Model(_) => EXIT_MODEL,
        }
    }
}

impl From<crate::corpus::CorpusError> for CliError {
    fn from(e: crate::corpus::CorpusError) -> CliError {
        CliError::Data(e.to_string())
    }
}

impl From<TokenizerError> for CliError {
    fn from(e: TokenizerError) -> CliError {
        CliError::Data(e.to_string())
    }
}

impl From<crate::augment::AugmentError> for CliError {
    fn from(e: crate::augment::AugmentError) -> CliError {
        CliError::Usage(e.to_string())
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> CliError {
        match e {
            ModelError::Io(_)
            | ModelError::UnsupportedFile(_)
            | ModelError::CorruptFile(_)
            | ModelError::MetadataJson(_)
            | ModelError::Tokenize(_) => CliError::Data(e.to_string()),
            other => CliError::Model(other.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> CliError {
        match e {
            TrainError::InvalidConfig(_) => CliError::Usage(e.to_string()),
            TrainError::EmptyTrainingSet | TrainError::Tokenize(_) => {
                CliError::Data(e.to_string())
            }
            TrainError::Model(m) => m.into(),
            other => CliError::Model(other.to_string()),
        }
    }
}

impl From<MetricsError> for CliError {
    fn from(e: MetricsError) -> CliError {
        match e {
            MetricsError::Model(m) => m.into(),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<SkeletonError> for CliError {
    fn from(e: SkeletonError) -> CliError {
        match e {
            SkeletonError::UnknownKeepTag { .. } => CliError::Usage(e.to_string()),
            SkeletonError::Model(m) => m.into(),
            SkeletonError::EmptyInput => CliError::Data(e.to_string()),
        }
    }
}

/// The JSON run-configuration file accepted by `--config`. Every field is
/// optional; present fields override built-in defaults and are themselves
/// overridden by command-line flags. Unknown fields are rejected.
#[derive(Debug, Default, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    // Tokenizer.
    pub vocab_size: Option<usize>,
    pub min_frequency: Option<usize>,
    // Model architecture.
    pub max_len: Option<usize>,
    pub d_model: Option<usize>,
    pub n_heads: Option<usize>,
    pub n_layers: Option<usize>,
    pub d_ff: Option<usize>,
    pub dropout: Option<f64>,
    // Optimisation.
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub learning_rate: Option<f64>,
    pub clip_norm: Option<f64>,
    pub shuffle: Option<bool>,
    pub seed: Option<u64>,
    // Masked-language-model corruption.
    pub mask_prob: Option<f64>,
    pub mask_token_prob: Option<f64>,
    pub random_token_prob: Option<f64>,
    pub keep_token_prob: Option<f64>,
    // Sliding-window augmentation.
    pub window_min: Option<usize>,
    pub window_max: Option<usize>,
    pub dedup: Option<bool>,
    pub augment: Option<bool>,
    // Splitting and length handling.
    pub val_ratio: Option<f64>,
    pub strict_len: Option<bool>,
    // Skeletons.
    pub keep_lexical: Option<Vec<String>>,
    pub separator: Option<String>,
    // Paths.
    pub corpus: Option<PathBuf>,
    pub val_corpus: Option<PathBuf>,
    pub tokenizer: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub report: Option<PathBuf>,
    pub input: Option<PathBuf>,
}

fn load_run_config(path: Option<&Path>) -> Result<RunConfig, CliError> {
    let Some(path) = path else { return Ok(RunConfig::default()) };
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::Usage(format!("bad config {}: {e}", path.display())))
}

/// flag > config file > default.
fn pick<T>(flag: Option<T>, file: Option<T>, default: T) -> T {
    flag.or(file).unwrap_or(default)
}

/// flag > config file, both optional.
fn pick_opt<T>(flag: Option<T>, file: Option<T>) -> Option<T> {
    flag.or(file)
}

fn require(path: Option<PathBuf>, flag: &str) -> Result<PathBuf, CliError> {
    path.ok_or_else(|| CliError::Usage(format!("missing required option --{flag} (set it on the command line or in --config)")))
}

fn read_text(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path)
        .map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text)
        .map_err(|e| CliError::Data(format!("cannot write {}: {e}", path.display())))
}

fn read_corpus(path: &Path) -> Result<Corpus, CliError> {
    let text = read_text(path)?;
    let mut corpus = parse_conll(&text)
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    corpus.source_name = path.display().to_string();
    Ok(corpus)
}

fn read_tokenizer(path: &Path) -> Result<Tokenizer, CliError> {
    let text = read_text(path)?;
    Tokenizer::from_json(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

/// `model.sktg` → `model.tokenizer.json`: the sidecar written next to
/// every saved model so downstream commands find the tokenizer unaided.
fn tokenizer_sidecar(model_path: &Path) -> PathBuf {
    model_path.with_extension("tokenizer.json")
}

/// `model.sktg` → `model.history.jsonl`.
fn history_sidecar(model_path: &Path) -> PathBuf {
    model_path.with_extension("history.jsonl")
}

/// Stdin when no path is given.
fn read_input(path: Option<&Path>) -> Result<String, CliError> {
    match path {
        Some(path) => read_text(path),
        None => {
            let mut text = String::new();
            std::io::stdin()
                .read_to_string(&mut text)
                .map_err(|e| CliError::Data(format!("cannot read standard input: {e}")))?;
            Ok(text)
        }
    }
}

/// Checks that a tokenizer file matches the fingerprint recorded in a
/// model container.
fn check_fingerprint(tok: &Tokenizer, expected: &str, tok_path: &Path) -> Result<(), CliError> {
    let actual = tok.sha256_hex();
    if actual != expected {
        return Err(CliError::Data(format!(
            "tokenizer {} does not match the model (fingerprint {}, model expects {})",
            tok_path.display(),
            &actual[..12.min(actual.len())],
            &expected[..12.min(expected.len())],
        )));
    }
    Ok(())
}

/// With `--strict-len`, every sentence must fit `max_len` unabridged;
/// violations are data errors instead of silent truncation.
fn enforce_strict_len(
    tok: &Tokenizer,
    corpus: &Corpus,
    max_len: usize,
    strict: bool,
) -> Result<(), CliError> {
    if !strict {
        return Ok(());
    }
    for (i, sentence) in corpus.sentences.iter().enumerate() {
        tok.encode_words(sentence.words(), max_len, LengthMode::Strict)
            .map_err(|e| CliError::Data(format!("sentence {} of {}: {e}", i + 1, corpus.source_name)))?;
    }
    Ok(())
}

fn parse_keep_lexical(names: &[String]) -> Result<BTreeSet<Tag>, CliError> {
    let mut tags = BTreeSet::new();
    for name in names {
        let tag = Tag::new(name)
            .map_err(|e| CliError::Usage(format!("bad --keep-lexical value: {e}")))?;
        tags.insert(tag);
    }
    Ok(tags)
}

#[derive(Parser, Debug)]
#[command(
    name = "skeletag",
    version,
    about = "Part-of-speech tagging from scratch: BPE subwords, a compact transformer, and skeletal sentence structures",
    propagate_version = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Learn a BPE subword tokenizer from a tagged corpus
    TokenizerTrain(TokenizerTrainArgs),
    /// Expand a corpus into sliding-window fragments
    Augment(AugmentArgs),
    /// Pretrain a model with the masked-language-model objective
    Pretrain(PretrainArgs),
    /// Train (or fine-tune) the token classifier
    Train(TrainArgs),
    /// Score a model against a tagged corpus
    Eval(EvalArgs),
    /// Tag raw text, one sentence per line
    Tag(TagArgs),
    /// Extract skeletal part-of-speech structures from raw text
    Skeleton(SkeletonArgs),
    /// Print a model file's metadata without loading weights
    Inspect(InspectArgs),
}

#[derive(Args, Debug, Default)]
struct CommonArgs {
    /// JSON run-config file; command-line flags override its fields
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Seed for every random choice [default: 42]
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug, Default)]
struct ArchArgs {
    /// Maximum encoded sequence length [default: 128]
    #[arg(long)]
    max_len: Option<usize>,
    /// Hidden width [default: 64]
    #[arg(long)]
    d_model: Option<usize>,
    /// Attention heads [default: 4]
    #[arg(long)]
    n_heads: Option<usize>,
    /// Encoder layers [default: 2]
    #[arg(long)]
    n_layers: Option<usize>,
    /// Feed-forward inner width [default: 256]
    #[arg(long)]
    d_ff: Option<usize>,
    /// Dropout rate [default: 0.1]
    #[arg(long)]
    dropout: Option<f64>,
}

impl ArchArgs {
    fn is_empty(&self) -> bool {
        self.max_len.is_none()
            && self.d_model.is_none()
            && self.n_heads.is_none()
            && self.n_layers.is_none()
            && self.d_ff.is_none()
            && self.dropout.is_none()
    }

    fn resolve(
        &self,
        rc: &RunConfig,
        vocab_size: usize,
        n_tags: usize,
        seed: u64,
    ) -> Result<ModelConfig, CliError> {
        let mut config = ModelConfig::desk(vocab_size, n_tags, seed);
        config.max_len = pick(self.max_len, rc.max_len, config.max_len);
        config.d_model = pick(self.d_model, rc.d_model, config.d_model);
        config.n_heads = pick(self.n_heads, rc.n_heads, config.n_heads);
        config.n_layers = pick(self.n_layers, rc.n_layers, config.n_layers);
        config.d_ff = pick(self.d_ff, rc.d_ff, config.d_ff);
        config.dropout_rate = pick(self.dropout, rc.dropout, config.dropout_rate);
        config.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(config)
    }
}

#[derive(Args, Debug, Default)]
struct OptimArgs {
    /// Training epochs [default: 10]
    #[arg(long)]
    epochs: Option<usize>,
    /// Batch size [default: 32]
    #[arg(long)]
    batch_size: Option<usize>,
    /// Adam learning rate [default: 0.0003]
    #[arg(long)]
    lr: Option<f64>,
    /// Global gradient-norm clip [default: 1]
    #[arg(long)]
    clip_norm: Option<f64>,
    /// Reshuffle the training set every epoch [default: true]
    #[arg(long)]
    shuffle: Option<bool>,
}

impl OptimArgs {
    fn resolve(&self, rc: &RunConfig, seed: u64) -> Result<TrainConfig, CliError> {
        let default = TrainConfig::default();
        let config = TrainConfig {
            epochs: pick(self.epochs, rc.epochs, default.epochs),
            batch_size: pick(self.batch_size, rc.batch_size, default.batch_size),
            learning_rate: pick(self.lr, rc.learning_rate, default.learning_rate),
            clip_norm: pick(self.clip_norm, rc.clip_norm, default.clip_norm),
            shuffle: pick(self.shuffle, rc.shuffle, default.shuffle),
            seed,
            ..default
        };
        config.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(config)
    }
}

#[derive(Args, Debug, Default)]
struct WindowArgs {
    /// Smallest window size [default: 1]
    #[arg(long)]
    window_min: Option<usize>,
    /// Largest window size [default: the full sentence]
    #[arg(long)]
    window_max: Option<usize>,
    /// Drop duplicate fragments, keeping the first
    /// [default: true when training, false for augment]
    #[arg(long)]
    dedup: Option<bool>,
}

impl WindowArgs {
    fn resolve(&self, rc: &RunConfig, dedup_default: bool) -> Result<WindowSpec, CliError> {
        WindowSpec::new(
            pick(self.window_min, rc.window_min, 1),
            pick_opt(self.window_max, rc.window_max),
            pick(self.dedup, rc.dedup, dedup_default),
        )
        .map_err(CliError::from)
    }
}

#[derive(Args, Debug)]
struct TokenizerTrainArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Tagged corpus (two-column TSV) supplying the training text
    #[arg(long, value_name = "FILE")]
    corpus: Option<PathBuf>,
    /// Target vocabulary size, special tokens included [default: 2000]
    #[arg(long)]
    vocab_size: Option<usize>,
    /// Stop merging below this pair frequency [default: 2]
    #[arg(long)]
    min_frequency: Option<usize>,
    /// Where to write the tokenizer JSON
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct AugmentArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Corpus to expand (two-column TSV)
    #[arg(long, value_name = "FILE")]
    corpus: Option<PathBuf>,
    #[command(flatten)]
    windows: WindowArgs,
    /// Where to write the expanded corpus
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct PretrainArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Tagged corpus; its text feeds the MLM, its tags size the classifier
    #[arg(long, value_name = "FILE")]
    corpus: Option<PathBuf>,
    /// Tokenizer JSON trained with `tokenizer-train`
    #[arg(long, value_name = "FILE")]
    tokenizer: Option<PathBuf>,
    #[command(flatten)]
    arch: ArchArgs,
    #[command(flatten)]
    optim: OptimArgs,
    /// Fraction of eligible positions corrupted per sentence [default: 0.15]
    #[arg(long)]
    mask_prob: Option<f64>,
    /// Where to write the pretrained model container
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Training corpus (two-column TSV)
    #[arg(long, value_name = "FILE")]
    corpus: Option<PathBuf>,
    /// Held-out corpus; replaces the automatic split
    #[arg(long, value_name = "FILE")]
    val_corpus: Option<PathBuf>,
    /// Fraction of sentences held out when --val-corpus is absent [default: 0.2]
    #[arg(long)]
    val_ratio: Option<f64>,
    /// Tokenizer JSON (defaults to the --model sidecar when fine-tuning)
    #[arg(long, value_name = "FILE")]
    tokenizer: Option<PathBuf>,
    /// Pretrained model container to fine-tune from
    #[arg(long, value_name = "FILE")]
    model: Option<PathBuf>,
    #[command(flatten)]
    arch: ArchArgs,
    #[command(flatten)]
    optim: OptimArgs,
    /// Expand the training half with sliding windows [default: false]
    #[arg(long)]
    augment: Option<bool>,
    #[command(flatten)]
    windows: WindowArgs,
    /// Error on sentences longer than max-len instead of truncating [default: false]
    #[arg(long)]
    strict_len: Option<bool>,
    /// Where to write the trained model container
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
    /// Also write the best model's validation report JSON here
    #[arg(long, value_name = "FILE")]
    report: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Model container to score
    #[arg(long, value_name = "FILE")]
    model: Option<PathBuf>,
    /// Gold corpus (two-column TSV)
    #[arg(long, value_name = "FILE")]
    corpus: Option<PathBuf>,
    /// Tokenizer JSON [default: the model's .tokenizer.json sidecar]
    #[arg(long, value_name = "FILE")]
    tokenizer: Option<PathBuf>,
    /// Error on sentences longer than the model's max-len [default: false]
    #[arg(long)]
    strict_len: Option<bool>,
    /// Where to write the report JSON
    #[arg(long, value_name = "FILE")]
    report: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct TagArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Model container to tag with
    #[arg(long, value_name = "FILE")]
    model: Option<PathBuf>,
    /// Tokenizer JSON [default: the model's .tokenizer.json sidecar]
    #[arg(long, value_name = "FILE")]
    tokenizer: Option<PathBuf>,
    /// Raw text, one sentence per line [default: standard input]
    #[arg(long, value_name = "FILE")]
    input: Option<PathBuf>,
    /// Where to write the tagged TSV [default: standard output]
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SkeletonArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Model container to tag with
    #[arg(long, value_name = "FILE")]
    model: Option<PathBuf>,
    /// Tokenizer JSON [default: the model's .tokenizer.json sidecar]
    #[arg(long, value_name = "FILE")]
    tokenizer: Option<PathBuf>,
    /// Raw text, one sentence per line [default: standard input]
    #[arg(long, value_name = "FILE")]
    input: Option<PathBuf>,
    /// Comma-separated tags whose words keep their surface form [default: none]
    #[arg(long, value_delimiter = ',', value_name = "TAG,TAG")]
    keep_lexical: Option<Vec<String>>,
    /// Joins the output tokens [default: a space]
    #[arg(long)]
    separator: Option<String>,
    /// Where to write the skeletons [default: standard output]
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct InspectArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Model container to describe
    #[arg(long, value_name = "FILE")]
    model: Option<PathBuf>,
}

/// Runs the CLI against the given argument vector (`argv[0]` included) and
/// returns the process exit code. Callable in-process for testing.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            // --help/--version land here too; they are not failures.
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let outcome = match cli.command {
        Command::TokenizerTrain(args) => cmd_tokenizer_train(args),
        Command::Augment(args) => cmd_augment(args),
        Command::Pretrain(args) => cmd_pretrain(args),
        Command::Train(args) => cmd_train(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Tag(args) => cmd_tag(args),
        Command::Skeleton(args) => cmd_skeleton(args),
        Command::Inspect(args) => cmd_inspect(args),
    };
    match outcome {
        Ok(Some(summary)) => {
            println!("{summary}");
            EXIT_OK
        }
        Ok(None) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.code()
        }
    }
}

fn cmd_tokenizer_train(args: TokenizerTrainArgs) -> Result<Option<String>, CliError> {
    let rc = load_run_config(args.common.config.as_deref())?;
    let corpus_path = require(pick_opt(args.corpus, rc.corpus.clone()), "corpus")?;
    let out = require(pick_opt(args.out, rc.out.clone()), "out")?;
    let vocab_size = pick(args.vocab_size, rc.vocab_size, 2000);
    let min_frequency = pick(args.min_frequency, rc.min_frequency, 2);

    let corpus = read_corpus(&corpus_path)?;
    let texts: Vec<String> = corpus.sentences.iter().map(|s| s.words().join(" ")).collect();
    let tok = train_bpe(&texts, vocab_size, min_frequency)?;
    write_text(&out, &tok.to_json())?;
    Ok(Some(format!(
        "trained BPE tokenizer on {} sentences: {} tokens ({} merges) -> {}",
        corpus.len(),
        tok.vocab_size(),
        tok.merges().len(),
        out.display()
    )))
}

fn cmd_augment(args: AugmentArgs) -> Result<Option<String>, CliError> {
    let rc = load_run_config(args.common.config.as_deref())?;
    let corpus_path = require(pick_opt(args.corpus, rc.corpus.clone()), "corpus")?;
    let out = require(pick_opt(args.out, rc.out.clone()), "out")?;
    let spec = args.windows.resolve(&rc, false)?;

    let corpus = read_corpus(&corpus_path)?;
    let expanded = augment_corpus(&corpus, &spec);
    if expanded.is_empty() {
        return Err(CliError::Data(format!(
            "no fragment of {} fits the window range",
            corpus_path.display()
        )));
    }
    write_text(&out, &write_conll(&expanded)?)?;
    Ok(Some(format!(
        "expanded {} sentences into {} fragments -> {}",
        corpus.len(),
        expanded.len(),
        out.display()
    )))
}

fn cmd_pretrain(args: PretrainArgs) -> Result<Option<String>, CliError> {
    let rc = load_run_config(args.common.config.as_deref())?;
    let corpus_path = require(pick_opt(args.corpus, rc.corpus.clone()), "corpus")?;
    let tok_path = require(pick_opt(args.tokenizer, rc.tokenizer.clone()), "tokenizer")?;
    let out = require(pick_opt(args.out, rc.out.clone()), "out")?;
    let seed = pick(args.common.seed, rc.seed, 42);

    let corpus = read_corpus(&corpus_path)?;
    let tok = read_tokenizer(&tok_path)?;
    let tagset = tagset_of(&corpus);
    let model_config = args.arch.resolve(&rc, tok.vocab_size(), tagset.len(), seed)?;
    let train_config = args.optim.resolve(&rc, seed)?;
    let mlm_config = MlmConfig {
        mask_prob: pick(args.mask_prob, rc.mask_prob, 0.15),
        mask_token_prob: rc.mask_token_prob.unwrap_or(0.8),
        random_token_prob: rc.random_token_prob.unwrap_or(0.1),
        keep_prob: rc.keep_token_prob.unwrap_or(0.1),
        seed,
    };
    mlm_config.validate().map_err(|e| CliError::Usage(e.to_string()))?;

    let sentences: Vec<Vec<String>> =
        corpus.sentences.iter().map(|s| s.words().to_vec()).collect();
    let (params, losses) = pretrain_mlm(&model_config, &tok, &sentences, &mlm_config, &train_config)?;
    for (i, loss) in losses.iter().enumerate() {
        println!("epoch {:>3}  mlm_loss {loss:.4}", i + 1);
    }

    save_model(&out, &params, &tagset, &tok.sha256_hex())?;
    write_text(&tokenizer_sidecar(&out), &tok.to_json())?;
    let history: String = losses
        .iter()
        .enumerate()
        .map(|(i, loss)| format!("{{\"epoch\":{},\"mlm_loss\":{loss}}}\n", i + 1))
        .collect();
    write_text(&history_sidecar(&out), &history)?;
    Ok(Some(format!(
        "pretrained {} epochs on {} sentences (final MLM loss {:.4}) -> {}",
        losses.len(),
        corpus.len(),
        losses.last().copied().unwrap_or(f64::NAN),
        out.display()
    )))
}

fn cmd_train(args: TrainArgs) -> Result<Option<String>, CliError> {
    let rc = load_run_config(args.common.config.as_deref())?;
    let corpus_path = require(pick_opt(args.corpus, rc.corpus.clone()), "corpus")?;
    let out = require(pick_opt(args.out, rc.out.clone()), "out")?;
    let seed = pick(args.common.seed, rc.seed, 42);
    let strict = pick(args.strict_len, rc.strict_len, false);
    let model_in = pick_opt(args.model, rc.model.clone());

    let corpus = read_corpus(&corpus_path)?;
    let (train_part, val_part) = match pick_opt(args.val_corpus, rc.val_corpus.clone()) {
        Some(val_path) => (corpus, read_corpus(&val_path)?),
        None => {
            let ratio = pick(args.val_ratio, rc.val_ratio, 0.2);
            split(&corpus, ratio, seed)?
        }
    };

    // Resolve the starting point: a pretrained container or a fresh model.
    let (init, tok, tagset) = match &model_in {
        Some(model_path) => {
            if !args.arch.is_empty() {
                return Err(CliError::Usage(
                    "architecture flags cannot be combined with --model; the container fixes the architecture".to_string(),
                ));
            }
            let loaded = load_model(model_path)?;
            let tok_path = pick_opt(args.tokenizer, rc.tokenizer.clone())
                .unwrap_or_else(|| tokenizer_sidecar(model_path));
            let tok = read_tokenizer(&tok_path)?;
            check_fingerprint(&tok, &loaded.tokenizer_sha256, &tok_path)?;
            let corpus_tags = tagset_of(&train_part);
            if corpus_tags.tags() != loaded.tagset.tags() {
                return Err(CliError::Data(format!(
                    "corpus tag inventory {:?} does not match the model's {:?}",
                    corpus_tags.tags().iter().map(|t| t.to_string()).collect::<Vec<_>>(),
                    loaded.tagset.tags().iter().map(|t| t.to_string()).collect::<Vec<_>>(),
                )));
            }
            (loaded.params, tok, loaded.tagset)
        }
        None => {
            let tok_path = require(
                pick_opt(args.tokenizer, rc.tokenizer.clone()),
                "tokenizer",
            )?;
            let tok = read_tokenizer(&tok_path)?;
            let tagset = tagset_of(&train_part);
            let config = args.arch.resolve(&rc, tok.vocab_size(), tagset.len(), seed)?;
            (init_model(&config)?, tok, tagset)
        }
    };

    enforce_strict_len(&tok, &train_part, init.config.max_len, strict)?;
    enforce_strict_len(&tok, &val_part, init.config.max_len, strict)?;

    // Duplicate fragments add no information to training, so dedup
    // defaults on here (and off for the standalone `augment` command).
    let train_part = if pick(args.augment, rc.augment, false) {
        let spec = args.windows.resolve(&rc, true)?;
        let expanded = augment_corpus(&train_part, &spec);
        println!(
            "augmented training set: {} sentences -> {} fragments",
            train_part.len(),
            expanded.len()
        );
        expanded
    } else {
        train_part
    };

    let train_config = args.optim.resolve(&rc, seed)?;
    let (best, history) =
        train_token_classifier(init, &train_part, &val_part, &tok, &tagset, &train_config)?;
    for record in &history.records {
        println!(
            "epoch {:>3}  loss {:.4}  val_f1 {:.4}",
            record.epoch, record.train_loss, record.val_weighted_f1
        );
    }

    save_model(&out, &best, &tagset, &tok.sha256_hex())?;
    write_text(&tokenizer_sidecar(&out), &tok.to_json())?;
    write_text(&history_sidecar(&out), &history.to_jsonl())?;
    if let Some(report_path) = pick_opt(args.report, rc.report.clone()) {
        let report = evaluate(&best, &tok, &tagset, &val_part)?;
        write_text(&report_path, &report.to_json())?;
    }
    Ok(Some(format!(
        "trained {} epochs on {} sentences; best val weighted F1 {:.4} (epoch {}) -> {}",
        history.records.len(),
        train_part.len(),
        history.best_val_f1,
        history.best_epoch,
        out.display()
    )))
}

/// Loads a model container together with its tokenizer (explicit path or
/// sidecar), verifying the fingerprint.
fn load_model_and_tokenizer(
    model_path: &Path,
    tokenizer_flag: Option<PathBuf>,
) -> Result<(ModelParams, Tokenizer, TagSet), CliError> {
    let loaded = load_model(model_path)?;
    let tok_path = tokenizer_flag.unwrap_or_else(|| tokenizer_sidecar(model_path));
    let tok = read_tokenizer(&tok_path)?;
    check_fingerprint(&tok, &loaded.tokenizer_sha256, &tok_path)?;
    Ok((loaded.params, tok, loaded.tagset))
}

fn cmd_eval(args: EvalArgs) -> Result<Option<String>, CliError> {
    let rc = load_run_config(args.common.config.as_deref())?;
    let model_path = require(pick_opt(args.model, rc.model.clone()), "model")?;
    let corpus_path = require(pick_opt(args.corpus, rc.corpus.clone()), "corpus")?;
    let strict = pick(args.strict_len, rc.strict_len, false);

    let (params, tok, tagset) =
        load_model_and_tokenizer(&model_path, pick_opt(args.tokenizer, rc.tokenizer.clone()))?;
    let corpus = read_corpus(&corpus_path)?;
    enforce_strict_len(&tok, &corpus, params.config.max_len, strict)?;

    let report = evaluate(&params, &tok, &tagset, &corpus)?;
    println!("{report}");
    if let Some(report_path) = pick_opt(args.report, rc.report.clone()) {
        write_text(&report_path, &report.to_json())?;
    }
    Ok(Some(format!(
        "weighted F1 {:.4}, accuracy {:.4} over {} words of {}",
        report.weighted_f1,
        report.accuracy,
        report.total_words,
        corpus_path.display()
    )))
}

fn cmd_tag(args: TagArgs) -> Result<Option<String>, CliError> {
    let rc = load_run_config(args.common.config.as_deref())?;
    let model_path = require(pick_opt(args.model, rc.model.clone()), "model")?;
    let (params, tok, tagset) =
        load_model_and_tokenizer(&model_path, pick_opt(args.tokenizer, rc.tokenizer.clone()))?;

    let text = read_input(pick_opt(args.input, rc.input.clone()).as_deref())?;
    let mut sentences = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let words: Vec<&str> = line.split_whitespace().collect();
        if words.is_empty() {
            eprintln!("warning: line {} is blank, skipped", idx + 1);
            continue;
        }
        sentences.push(crate::model::predict_tags(&params, &tok, &tagset, &words)?);
    }
    if sentences.is_empty() {
        return Err(CliError::Data("no sentences in the input text".to_string()));
    }
    let count = sentences.len();
    let tagged = Corpus::new(sentences, "tagged input");
    let tsv = write_conll(&tagged)?;
    let summary = format!("tagged {count} sentences");
    match pick_opt(args.out, rc.out.clone()) {
        Some(out) => {
            write_text(&out, &tsv)?;
            Ok(Some(format!("{summary} -> {}", out.display())))
        }
        None => {
            print!("{tsv}");
            eprintln!("{summary}");
            Ok(None)
        }
    }
}

fn cmd_skeleton(args: SkeletonArgs) -> Result<Option<String>, CliError> {
    let rc = load_run_config(args.common.config.as_deref())?;
    let model_path = require(pick_opt(args.model, rc.model.clone()), "model")?;
    let (params, tok, tagset) =
        load_model_and_tokenizer(&model_path, pick_opt(args.tokenizer, rc.tokenizer.clone()))?;

    let keep_names = pick_opt(args.keep_lexical, rc.keep_lexical.clone()).unwrap_or_default();
    let config = SkeletonConfig {
        keep_lexical: parse_keep_lexical(&keep_names)?,
        separator: pick(args.separator, rc.separator.clone(), " ".to_string()),
    };
    let text = read_input(pick_opt(args.input, rc.input.clone()).as_deref())?;
    let output = skeletonize_text(&params, &tok, &tagset, &text, &config)?;
    for line in &output.skipped_lines {
        eprintln!("warning: line {line} is blank, skipped");
    }
    let rendered: String = output.skeletons.iter().map(|s| format!("{s}\n")).collect();
    let summary = format!("extracted {} skeletons", output.skeletons.len());
    match pick_opt(args.out, rc.out.clone()) {
        Some(out) => {
            write_text(&out, &rendered)?;
            Ok(Some(format!("{summary} -> {}", out.display())))
        }
        None => {
            print!("{rendered}");
            eprintln!("{summary}");
            Ok(None)
        }
    }
}

fn cmd_inspect(args: InspectArgs) -> Result<Option<String>, CliError> {
    let rc = load_run_config(args.common.config.as_deref())?;
    let model_path = require(pick_opt(args.model, rc.model.clone()), "model")?;
    let meta = read_metadata(&model_path)?;
    println!(
        "{}",
        serde_json::to_string_pretty(&meta)
            .map_err(|e| CliError::Model(format!("metadata serialisation: {e}")))?
    );
    let tensor_count = meta.tensors.len();
    let parameter_count: usize = meta.tensors.iter().map(|t| t.rows * t.cols).sum();
    Ok(Some(format!(
        "{}: {} layers, d_model {}, {} tags, {} tensors, {} parameters",
        model_path.display(),
        meta.config.n_layers,
        meta.config.d_model,
        meta.config.n_tags,
        tensor_count,
        parameter_count
    )))
}
