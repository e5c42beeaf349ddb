//! A compact BERT-style transformer encoder for token classification.
//!
//! The architecture is the classic post-layer-norm encoder: token plus
//! learned position embeddings feed `n_layers` blocks of multi-head
//! self-attention and a GELU feed-forward network, each followed by a
//! residual connection and layer normalisation; a final layer norm and a
//! linear head produce per-position logits. Padding positions are excluded
//! from attention by masking their key scores to `-inf` before softmax.
//!
//! All mathematics is explicit: the only outside help is `ndarray` for
//! matrix storage and multiplication. Parameters are kept in `f64` but
//! quantised through `f32` after initialisation and after every optimiser
//! step, so the on-disk `f32` container round-trips bit-exactly.

mod container;
pub(crate) mod encoder;

pub use container::{load_model, read_metadata, save_model, ContainerMeta, LoadedModel, TensorEntry};

use ndarray::{Array2, Array3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{TagSet, TaggedSentence};
use crate::tokenizer::{Encoding, LengthMode, Tokenizer, TokenizerError};

/// Standard deviation of the truncated-normal parameter initialisation.
const INIT_STD: f64 = 0.02;
/// Seed offset so the MLM head draws from its own stream.
const MLM_HEAD_SEED_OFFSET: u64 = 0x4d4c4d;

/// Errors produced by model construction, the forward pass, and model I/O.
#[derive(Debug, Error)]
pub enum ModelError {
    /// A structurally impossible configuration.
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    /// The forward pass received an empty batch.
    #[error("cannot run the model on an empty batch")]
    EmptyBatch,
    /// Encodings in one batch have different lengths.
    #[error("batch encodings disagree in length: {expected} vs {found}")]
    RaggedBatch { expected: usize, found: usize },
    /// An encoding is longer than the model's `max_len`.
    #[error("sequence length {len} exceeds model max_len {max_len}")]
    SequenceTooLong { len: usize, max_len: usize },
    /// A token id outside the embedding table.
    #[error("token id {id} is out of range for vocab_size {vocab_size}")]
    TokenIdOutOfRange { id: u32, vocab_size: usize },
    /// An encoding with no real (non-padding) positions.
    #[error("encoding has an all-zero attention mask")]
    EmptyEncoding,
    /// The provided tag set does not match the model's classifier head.
    #[error("tag set has {found} tags but the model classifies {expected}")]
    TagSetSize { expected: usize, found: usize },
    /// A parameter or stored tensor is NaN or infinite.
    #[error("non-finite value in tensor {0:?}")]
    NonFinite(String),
    /// Tokenisation failed while preparing model input.
    #[error(transparent)]
    Tokenize(#[from] TokenizerError),
    /// File I/O failure.
    #[error("model file I/O: {0}")]
    Io(#[from] std::io::Error),
    /// Not a model container, or an unsupported container version.
    #[error("unsupported model file: {0}")]
    UnsupportedFile(String),
    /// A structurally broken model container.
    #[error("corrupt model file: {0}")]
    CorruptFile(String),
    /// Metadata JSON (de)serialisation failure.
    #[error("model metadata JSON error: {0}")]
    MetadataJson(#[from] serde_json::Error),
}

/// Hyperparameters fixing the model architecture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Tokenizer vocabulary size (embedding rows).
    pub vocab_size: usize,
    /// Maximum encoded sequence length (position embedding rows).
    pub max_len: usize,
    /// Hidden width.
    pub d_model: usize,
    /// Attention heads; must divide `d_model`.
    pub n_heads: usize,
    /// Encoder blocks.
    pub n_layers: usize,
    /// Feed-forward inner width.
    pub d_ff: usize,
    /// Classifier output classes.
    pub n_tags: usize,
    /// Dropout rate in `[0, 1)`; active only in training mode.
    pub dropout_rate: f64,
    /// Seed for parameter initialisation.
    pub seed: u64,
}

impl ModelConfig {
    /// The desk-scale default: 2 layers, 4 heads, width 64, feed-forward
    /// 256, max length 128, dropout 0.1.
    pub fn desk(vocab_size: usize, n_tags: usize, seed: u64) -> ModelConfig {
        ModelConfig {
            vocab_size,
            max_len: 128,
            d_model: 64,
            n_heads: 4,
            n_layers: 2,
            d_ff: 256,
            n_tags,
            dropout_rate: 0.1,
            seed,
        }
    }

    /// Checks the configuration is structurally sound.
    pub fn validate(&self) -> Result<(), ModelError> {
        let fail = |msg: String| Err(ModelError::InvalidConfig(msg));
        if self.vocab_size < 6 {
            return fail(format!("vocab_size {} must cover 5 specials plus content", self.vocab_size));
        }
        if self.max_len < 3 {
            return fail(format!("max_len {} must be at least 3", self.max_len));
        }
        if self.d_model == 0 || self.n_heads == 0 || self.n_layers == 0 || self.d_ff == 0 {
            return fail("d_model, n_heads, n_layers, and d_ff must be positive".to_string());
        }
        if self.d_model % self.n_heads != 0 {
            return fail(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            ));
        }
        if self.n_tags == 0 {
            return fail("n_tags must be positive".to_string());
        }
        if !(self.dropout_rate >= 0.0 && self.dropout_rate < 1.0) {
            return fail(format!("dropout_rate {} must lie in [0, 1)", self.dropout_rate));
        }
        Ok(())
    }

    /// Width of one attention head.
    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }
}

/// Gain and bias of one layer normalisation, each `[1, d]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerNormParams {
    pub gain: Array2<f64>,
    pub bias: Array2<f64>,
}

/// Query/key/value/output projections of one attention block.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams {
    pub w_q: Array2<f64>,
    pub b_q: Array2<f64>,
    pub w_k: Array2<f64>,
    pub b_k: Array2<f64>,
    pub w_v: Array2<f64>,
    pub b_v: Array2<f64>,
    pub w_o: Array2<f64>,
    pub b_o: Array2<f64>,
}

/// The two-layer GELU feed-forward network of one block.
#[derive(Debug, Clone, PartialEq)]
pub struct FeedForwardParams {
    pub w1: Array2<f64>,
    pub b1: Array2<f64>,
    pub w2: Array2<f64>,
    pub b2: Array2<f64>,
}

/// One encoder block: attention, feed-forward, and their layer norms.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderLayerParams {
    pub attention: AttentionParams,
    pub ln_attn: LayerNormParams,
    pub ff: FeedForwardParams,
    pub ln_ff: LayerNormParams,
}

/// The masked-language-model head used during pretraining.
#[derive(Debug, Clone, PartialEq)]
pub struct MlmHeadParams {
    pub weight: Array2<f64>,
    pub bias: Array2<f64>,
}

/// The full parameter bag. Doubles as the gradient container: gradients of
/// a parameter set share its shapes, names, and traversal order.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub token_embeddings: Array2<f64>,
    pub position_embeddings: Array2<f64>,
    pub layers: Vec<EncoderLayerParams>,
    pub final_ln: LayerNormParams,
    pub classifier_weight: Array2<f64>,
    pub classifier_bias: Array2<f64>,
    pub mlm_head: Option<MlmHeadParams>,
}

/// Which output head the forward/backward pass drives.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Head {
    /// The tag classifier (`n_tags` outputs per position).
    Classifier,
    /// The masked-language-model head (`vocab_size` outputs per position).
    Mlm,
}

/// Whether a forward pass applies dropout.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ForwardMode {
    /// Deterministic inference: dropout disabled.
    Eval,
    /// Training: dropout masks drawn from the given seed.
    Train { dropout_seed: u64 },
}

/// Per-position logits, shaped `[batch, seq_len, classes]`.
pub type Logits = Array3<f64>;

impl ModelParams {
    /// All-zero parameters of the given architecture.
    pub(crate) fn zeros(config: &ModelConfig, with_mlm_head: bool) -> ModelParams {
        let d = config.d_model;
        let ln = || LayerNormParams { gain: Array2::zeros((1, d)), bias: Array2::zeros((1, d)) };
        let layers = (0..config.n_layers)
            .map(|_| EncoderLayerParams {
                attention: AttentionParams {
                    w_q: Array2::zeros((d, d)),
                    b_q: Array2::zeros((1, d)),
                    w_k: Array2::zeros((d, d)),
                    b_k: Array2::zeros((1, d)),
                    w_v: Array2::zeros((d, d)),
                    b_v: Array2::zeros((1, d)),
                    w_o: Array2::zeros((d, d)),
                    b_o: Array2::zeros((1, d)),
                },
                ln_attn: ln(),
                ff: FeedForwardParams {
                    w1: Array2::zeros((d, config.d_ff)),
                    b1: Array2::zeros((1, config.d_ff)),
                    w2: Array2::zeros((config.d_ff, d)),
                    b2: Array2::zeros((1, d)),
                },
                ln_ff: ln(),
            })
            .collect();
        ModelParams {
            config: config.clone(),
            token_embeddings: Array2::zeros((config.vocab_size, d)),
            position_embeddings: Array2::zeros((config.max_len, d)),
            layers,
            final_ln: ln(),
            classifier_weight: Array2::zeros((d, config.n_tags)),
            classifier_bias: Array2::zeros((1, config.n_tags)),
            mlm_head: with_mlm_head.then(|| MlmHeadParams {
                weight: Array2::zeros((d, config.vocab_size)),
                bias: Array2::zeros((1, config.vocab_size)),
            }),
        }
    }

    /// A same-shaped bag of zeros (the natural gradient container).
    pub fn zeros_like(&self) -> ModelParams {
        ModelParams::zeros(&self.config, self.mlm_head.is_some())
    }

    pub fn has_mlm_head(&self) -> bool {
        self.mlm_head.is_some()
    }

    /// Every tensor with its canonical name, in the fixed traversal order
    /// used for initialisation, optimisation, and serialisation.
    pub fn named_tensors(&self) -> Vec<(String, &Array2<f64>)> {
        let mut out: Vec<(String, &Array2<f64>)> = vec![
            ("token_embeddings".to_string(), &self.token_embeddings),
            ("position_embeddings".to_string(), &self.position_embeddings),
        ];
        for (i, layer) in self.layers.iter().enumerate() {
            let a = &layer.attention;
            let f = &layer.ff;
            for (name, tensor) in [
                ("attention.w_q", &a.w_q),
                ("attention.b_q", &a.b_q),
                ("attention.w_k", &a.w_k),
                ("attention.b_k", &a.b_k),
                ("attention.w_v", &a.w_v),
                ("attention.b_v", &a.b_v),
                ("attention.w_o", &a.w_o),
                ("attention.b_o", &a.b_o),
                ("ln_attn.gain", &layer.ln_attn.gain),
                ("ln_attn.bias", &layer.ln_attn.bias),
                ("ff.w1", &f.w1),
                ("ff.b1", &f.b1),
                ("ff.w2", &f.w2),
                ("ff.b2", &f.b2),
                ("ln_ff.gain", &layer.ln_ff.gain),
                ("ln_ff.bias", &layer.ln_ff.bias),
            ] {
                out.push((format!("layers.{i}.{name}"), tensor));
            }
        }
        out.push(("final_ln.gain".to_string(), &self.final_ln.gain));
        out.push(("final_ln.bias".to_string(), &self.final_ln.bias));
        out.push(("classifier.weight".to_string(), &self.classifier_weight));
        out.push(("classifier.bias".to_string(), &self.classifier_bias));
        if let Some(mlm) = &self.mlm_head {
            out.push(("mlm_head.weight".to_string(), &mlm.weight));
            out.push(("mlm_head.bias".to_string(), &mlm.bias));
        }
        out
    }

    /// Mutable variant of [`ModelParams::named_tensors`], same order.
    pub fn named_tensors_mut(&mut self) -> Vec<(String, &mut Array2<f64>)> {
        let mut out: Vec<(String, &mut Array2<f64>)> = vec![
            ("token_embeddings".to_string(), &mut self.token_embeddings),
            ("position_embeddings".to_string(), &mut self.position_embeddings),
        ];
        for (i, layer) in self.layers.iter_mut().enumerate() {
            let a = &mut layer.attention;
            let f = &mut layer.ff;
            for (name, tensor) in [
                ("attention.w_q", &mut a.w_q),
                ("attention.b_q", &mut a.b_q),
                ("attention.w_k", &mut a.w_k),
                ("attention.b_k", &mut a.b_k),
                ("attention.w_v", &mut a.w_v),
                ("attention.b_v", &mut a.b_v),
                ("attention.w_o", &mut a.w_o),
                ("attention.b_o", &mut a.b_o),
                ("ln_attn.gain", &mut layer.ln_attn.gain),
                ("ln_attn.bias", &mut layer.ln_attn.bias),
                ("ff.w1", &mut f.w1),
                ("ff.b1", &mut f.b1),
                ("ff.w2", &mut f.w2),
                ("ff.b2", &mut f.b2),
                ("ln_ff.gain", &mut layer.ln_ff.gain),
                ("ln_ff.bias", &mut layer.ln_ff.bias),
            ] {
                out.push((format!("layers.{i}.{name}"), tensor));
            }
        }
        out.push(("final_ln.gain".to_string(), &mut self.final_ln.gain));
        out.push(("final_ln.bias".to_string(), &mut self.final_ln.bias));
        out.push(("classifier.weight".to_string(), &mut self.classifier_weight));
        out.push(("classifier.bias".to_string(), &mut self.classifier_bias));
        if let Some(mlm) = &mut self.mlm_head {
            out.push(("mlm_head.weight".to_string(), &mut mlm.weight));
            out.push(("mlm_head.bias".to_string(), &mut mlm.bias));
        }
        out
    }

    /// Mutable access to one tensor by its canonical name.
    pub fn tensor_mut(&mut self, name: &str) -> Option<&mut Array2<f64>> {
        self.named_tensors_mut()
            .into_iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
    }

    /// Rounds every value through `f32`, making the bag exactly
    /// representable in the on-disk format.
    pub fn quantize_f32(&mut self) {
        for (_, tensor) in self.named_tensors_mut() {
            tensor.mapv_inplace(|x| x as f32 as f64);
        }
    }

    /// Name of the first tensor holding a NaN or infinity, if any.
    pub fn first_non_finite(&self) -> Option<String> {
        self.named_tensors()
            .into_iter()
            .find(|(_, t)| t.iter().any(|x| !x.is_finite()))
            .map(|(name, _)| name)
    }
}

fn truncated_normal(rng: &mut ChaCha8Rng, normal: &Normal<f64>) -> f64 {
    // Resample until within two standard deviations.
    loop {
        let x = normal.sample(rng);
        if x.abs() <= 2.0 * INIT_STD {
            return x;
        }
    }
}

fn fill_initialised(params: &mut ModelParams, rng: &mut ChaCha8Rng) {
    let normal = Normal::new(0.0, INIT_STD).expect("valid normal distribution");
    for (name, tensor) in params.named_tensors_mut() {
        let leaf = name.rsplit('.').next().unwrap_or(&name);
        match leaf {
            "gain" => tensor.fill(1.0),
            "bias" | "b_q" | "b_k" | "b_v" | "b_o" | "b1" | "b2" => tensor.fill(0.0),
            _ => tensor.mapv_inplace(|_| truncated_normal(rng, &normal)),
        }
    }
}

/// Initialises a model: weights and embeddings from a truncated normal
/// (std 0.02, resampled beyond 2σ, seeded by `config.seed`), layer-norm
/// gains at 1, biases at 0. No MLM head is attached; see [`add_mlm_head`].
pub fn init_model(config: &ModelConfig) -> Result<ModelParams, ModelError> {
    config.validate()?;
    let mut params = ModelParams::zeros(config, false);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    fill_initialised(&mut params, &mut rng);
    params.quantize_f32();
    Ok(params)
}

/// Attaches a freshly initialised MLM head (no-op if one is present).
/// The head draws from its own seed stream so adding it never disturbs the
/// backbone initialisation.
pub fn add_mlm_head(params: &mut ModelParams) {
    if params.mlm_head.is_some() {
        return;
    }
    let config = &params.config;
    let mut head = MlmHeadParams {
        weight: Array2::zeros((config.d_model, config.vocab_size)),
        bias: Array2::zeros((1, config.vocab_size)),
    };
    let normal = Normal::new(0.0, INIT_STD).expect("valid normal distribution");
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(MLM_HEAD_SEED_OFFSET));
    head.weight.mapv_inplace(|_| truncated_normal(&mut rng, &normal));
    head.weight.mapv_inplace(|x| x as f32 as f64);
    params.mlm_head = Some(head);
}

/// Numerically stable softmax of one row: the maximum is subtracted before
/// exponentiation, so magnitudes up to ±1e3 (and far beyond) are safe.
/// Returns an empty vector for an empty row.
pub fn softmax(row: &[f64]) -> Vec<f64> {
    if row.is_empty() {
        return Vec::new();
    }
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = row.iter().map(|&x| (x - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Runs the encoder and the selected head over a batch of encodings.
///
/// All encodings must share one length `T ≤ max_len`; the result is
/// `[batch, T, classes]` with logits at every position, padding included
/// (padding rows carry no meaning and are ignored downstream).
pub fn forward_head(
    params: &ModelParams,
    batch: &[Encoding],
    mode: ForwardMode,
    head: Head,
) -> Result<Logits, ModelError> {
    if head == Head::Mlm && !params.has_mlm_head() {
        return Err(ModelError::InvalidConfig("model has no MLM head".to_string()));
    }
    let packed = encoder::pack(params, batch)?;
    let plan = match mode {
        ForwardMode::Eval => encoder::DropoutPlan::disabled(),
        ForwardMode::Train { dropout_seed } => {
            encoder::DropoutPlan::seeded(params.config.dropout_rate, dropout_seed)
        }
    };
    let (out, _cache) = encoder::forward_pass(params, &packed, plan, head);
    let classes = out.ncols();
    let logits = Array3::from_shape_vec(
        (packed.b, packed.t, classes),
        out.into_raw_vec_and_offset().0,
    )
    .expect("forward output reshapes to [batch, seq, classes]");
    Ok(logits)
}

/// [`forward_head`] with the tag classifier head.
pub fn forward(
    params: &ModelParams,
    batch: &[Encoding],
    mode: ForwardMode,
) -> Result<Logits, ModelError> {
    forward_head(params, batch, mode, Head::Classifier)
}

/// Index of the first maximal value of a row.
pub(crate) fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in row.iter().enumerate() {
        if x > row[best] {
            best = i;
        }
    }
    best
}

/// Tags a word sequence: encodes (truncating whole words that overflow
/// `max_len`), runs the encoder deterministically, and reads the argmax tag
/// at each word's first subword. The result may be shorter than the input
/// if truncation dropped trailing words.
pub fn predict_tags<S: AsRef<str>>(
    params: &ModelParams,
    tokenizer: &Tokenizer,
    tagset: &TagSet,
    words: &[S],
) -> Result<TaggedSentence, ModelError> {
    if tagset.len() != params.config.n_tags {
        return Err(ModelError::TagSetSize {
            expected: params.config.n_tags,
            found: tagset.len(),
        });
    }
    let enc = tokenizer.encode_words(words, params.config.max_len, LengthMode::Truncate)?;
    // Trim the padding tail: with keys masked, logits at kept positions are
    // unaffected, and a short sequence is much cheaper.
    let real_len = enc.real_len();
    let trimmed = Encoding {
        ids: enc.ids[..real_len].to_vec(),
        attention_mask: enc.attention_mask[..real_len].to_vec(),
        word_starts: enc.word_starts.clone(),
        label_ids: None,
    };
    let logits = forward(params, std::slice::from_ref(&trimmed), ForwardMode::Eval)?;

    let kept_words: Vec<String> = words
        .iter()
        .take(trimmed.word_starts.len())
        .map(|w| w.as_ref().to_string())
        .collect();
    let mut tags = Vec::with_capacity(kept_words.len());
    for &pos in &trimmed.word_starts {
        let row: Vec<f64> = (0..params.config.n_tags)
            .map(|k| logits[[0, pos, k]])
            .collect();
        let tag = tagset
            .tag(argmax(&row))
            .expect("argmax over n_tags is a valid tag id")
            .clone();
        tags.push(tag);
    }
    TaggedSentence::new(kept_words, tags)
        .map_err(|e| ModelError::CorruptFile(format!("prediction assembly: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Tag;
    use crate::tokenizer::train_bpe;

    pub(crate) fn tiny_config() -> ModelConfig {
        ModelConfig {
            vocab_size: 50,
            max_len: 16,
            d_model: 8,
            n_heads: 2,
            n_layers: 1,
            d_ff: 16,
            n_tags: 3,
            dropout_rate: 0.0,
            seed: 11,
        }
    }

    #[test]
    fn config_validation() {
        assert!(tiny_config().validate().is_ok());
        for breaker in [
            |c: &mut ModelConfig| c.vocab_size = 5,
            |c: &mut ModelConfig| c.max_len = 2,
            |c: &mut ModelConfig| c.d_model = 6, // not divisible by 4 heads
            |c: &mut ModelConfig| c.n_heads = 0,
            |c: &mut ModelConfig| c.n_layers = 0,
            |c: &mut ModelConfig| c.d_ff = 0,
            |c: &mut ModelConfig| c.n_tags = 0,
            |c: &mut ModelConfig| c.dropout_rate = 1.0,
            |c: &mut ModelConfig| c.dropout_rate = -0.1,
        ] {
            let mut config = ModelConfig::desk(100, 10, 1);
            breaker(&mut config);
            assert!(config.validate().is_err(), "expected invalid: {config:?}");
        }
        let desk = ModelConfig::desk(2000, 14, 1);
        assert_eq!(
            (desk.n_layers, desk.n_heads, desk.d_model, desk.d_ff, desk.max_len),
            (2, 4, 64, 256, 128)
        );
        assert!((desk.dropout_rate - 0.1).abs() < 1e-15);
    }

    #[test]
    fn init_is_deterministic_and_shaped() {
        let config = tiny_config();
        let a = init_model(&config).unwrap();
        let b = init_model(&config).unwrap();
        assert_eq!(a, b);

        let mut other = config.clone();
        other.seed = 12;
        let c = init_model(&other).unwrap();
        assert_ne!(a.token_embeddings, c.token_embeddings);

        assert_eq!(a.token_embeddings.dim(), (50, 8));
        assert_eq!(a.position_embeddings.dim(), (16, 8));
        assert_eq!(a.layers.len(), 1);
        assert_eq!(a.layers[0].ff.w1.dim(), (8, 16));
        assert_eq!(a.classifier_weight.dim(), (8, 3));
        assert!(a.mlm_head.is_none());
    }

    #[test]
    fn init_respects_truncation_and_special_values() {
        let params = init_model(&tiny_config()).unwrap();
        for (name, tensor) in params.named_tensors() {
            let leaf = name.rsplit('.').next().unwrap();
            match leaf {
                "gain" => assert!(tensor.iter().all(|&x| x == 1.0), "{name}"),
                "bias" | "b_q" | "b_k" | "b_v" | "b_o" | "b1" | "b2" => {
                    assert!(tensor.iter().all(|&x| x == 0.0), "{name}")
                }
                _ => {
                    assert!(
                        tensor.iter().all(|&x| x.abs() <= 2.0 * INIT_STD),
                        "{name} exceeds the 2σ truncation"
                    );
                    assert!(tensor.iter().any(|&x| x != 0.0), "{name} left at zero");
                }
            }
        }
        // Quantisation already applied: every value is f32-representable.
        for (_, tensor) in params.named_tensors() {
            assert!(tensor.iter().all(|&x| x == (x as f32 as f64)));
        }
        assert!(params.first_non_finite().is_none());
    }

    #[test]
    fn named_tensor_traversal_is_consistent() {
        let mut params = init_model(&tiny_config()).unwrap();
        add_mlm_head(&mut params);
        let names: Vec<String> = params.named_tensors().iter().map(|(n, _)| n.clone()).collect();
        let shapes: Vec<(usize, usize)> =
            params.named_tensors().iter().map(|(_, t)| t.dim()).collect();
        let mut_names: Vec<String> =
            params.named_tensors_mut().iter().map(|(n, _)| n.clone()).collect();
        assert_eq!(names, mut_names);
        assert_eq!(names.len(), 2 + 16 + 2 + 2 + 2);
        assert_eq!(names[0], "token_embeddings");
        assert!(names.contains(&"layers.0.attention.w_q".to_string()));
        assert!(names.contains(&"mlm_head.weight".to_string()));

        let zeros = params.zeros_like();
        let zero_shapes: Vec<(usize, usize)> =
            zeros.named_tensors().iter().map(|(_, t)| t.dim()).collect();
        assert_eq!(shapes, zero_shapes);
        assert!(zeros.named_tensors().iter().all(|(_, t)| t.iter().all(|&x| x == 0.0)));
    }

    #[test]
    fn mlm_head_attachment_is_stable() {
        let mut params = init_model(&tiny_config()).unwrap();
        let backbone = params.token_embeddings.clone();
        add_mlm_head(&mut params);
        assert!(params.has_mlm_head());
        assert_eq!(params.token_embeddings, backbone, "backbone untouched");
        let head = params.mlm_head.clone().unwrap();
        assert_eq!(head.weight.dim(), (8, 50));
        add_mlm_head(&mut params); // no-op
        assert_eq!(params.mlm_head.as_ref().unwrap().weight, head.weight);
    }

    #[test]
    fn softmax_known_values() {
        // softmax([ln 2, 0]) = [2/3, 1/3].
        let p = softmax(&[2.0f64.ln(), 0.0]);
        assert!((p[0] - 2.0 / 3.0).abs() < 1e-12);
        assert!((p[1] - 1.0 / 3.0).abs() < 1e-12);
        // Extreme magnitudes stay finite and normalised.
        let p = softmax(&[1e3, 0.0, -1e3]);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(p.iter().all(|&x| x.is_finite()));
        assert_eq!(softmax(&[]), Vec::<f64>::new());
        let p = softmax(&[5.0]);
        assert_eq!(p, vec![1.0]);
    }

    #[test]
    fn forward_shapes_and_validation() {
        let config = tiny_config();
        let params = init_model(&config).unwrap();
        let enc = |ids: Vec<u32>| {
            let mask = ids.iter().map(|&id| u8::from(id != 0)).collect();
            Encoding { ids, attention_mask: mask, word_starts: vec![1], label_ids: None }
        };
        let batch = vec![enc(vec![2, 7, 3, 0, 0, 0, 0, 0]), enc(vec![2, 8, 9, 3, 0, 0, 0, 0])];
        let logits = forward(&params, &batch, ForwardMode::Eval).unwrap();
        assert_eq!(logits.dim(), (2, 8, 3));
        assert!(logits.iter().all(|&x| x.is_finite()));

        let mlm = forward_head(&params, &batch, ForwardMode::Eval, Head::Mlm);
        // Mlm head missing → zeros bag has none; forward with Mlm head on a
        // model without one must fail cleanly.
        assert!(mlm.is_err());

        assert!(matches!(
            forward(&params, &[], ForwardMode::Eval),
            Err(ModelError::EmptyBatch)
        ));
        let ragged = vec![enc(vec![2, 3]), enc(vec![2, 7, 3])];
        assert!(matches!(
            forward(&params, &ragged, ForwardMode::Eval),
            Err(ModelError::RaggedBatch { .. })
        ));
        let long = enc((0..17).map(|_| 2).collect());
        assert!(matches!(
            forward(&params, &[long], ForwardMode::Eval),
            Err(ModelError::SequenceTooLong { len: 17, max_len: 16 })
        ));
        let alien = enc(vec![2, 99, 3]);
        assert!(matches!(
            forward(&params, &[alien], ForwardMode::Eval),
            Err(ModelError::TokenIdOutOfRange { id: 99, .. })
        ));
        let hollow = Encoding {
            ids: vec![0, 0],
            attention_mask: vec![0, 0],
            word_starts: vec![],
            label_ids: None,
        };
        assert!(matches!(
            forward(&params, &[hollow], ForwardMode::Eval),
            Err(ModelError::EmptyEncoding)
        ));
    }

    #[test]
    fn eval_forward_is_deterministic_and_padding_invariant() {
        let config = tiny_config();
        let params = init_model(&config).unwrap();
        let base = Encoding {
            ids: vec![2, 7, 8, 3, 0, 0],
            attention_mask: vec![1, 1, 1, 1, 0, 0],
            word_starts: vec![1, 2],
            label_ids: None,
        };
        let a = forward(&params, std::slice::from_ref(&base), ForwardMode::Eval).unwrap();
        let b = forward(&params, std::slice::from_ref(&base), ForwardMode::Eval).unwrap();
        assert_eq!(a, b);

        // Changing the *content* of padding positions must not move the
        // logits at real positions.
        let mut altered = base.clone();
        altered.ids[4] = 9;
        altered.ids[5] = 10;
        let c = forward(&params, std::slice::from_ref(&altered), ForwardMode::Eval).unwrap();
        for t in 0..4 {
            for k in 0..3 {
                assert_eq!(a[[0, t, k]], c[[0, t, k]], "position {t} class {k}");
            }
        }
    }

    #[test]
    fn train_mode_dropout_is_seeded() {
        let mut config = tiny_config();
        config.dropout_rate = 0.5;
        let params = init_model(&config).unwrap();
        let enc = Encoding {
            ids: vec![2, 7, 8, 3],
            attention_mask: vec![1, 1, 1, 1],
            word_starts: vec![1, 2],
            label_ids: None,
        };
        let batch = std::slice::from_ref(&enc);
        let a = forward(&params, batch, ForwardMode::Train { dropout_seed: 5 }).unwrap();
        let b = forward(&params, batch, ForwardMode::Train { dropout_seed: 5 }).unwrap();
        let c = forward(&params, batch, ForwardMode::Train { dropout_seed: 6 }).unwrap();
        assert_eq!(a, b, "same dropout seed, same output");
        assert_ne!(a, c, "different dropout seed, different output");

        // Rate 0 in train mode equals eval mode exactly.
        let mut no_drop = tiny_config();
        no_drop.dropout_rate = 0.0;
        let params = init_model(&no_drop).unwrap();
        let x = forward(&params, batch, ForwardMode::Train { dropout_seed: 5 }).unwrap();
        let y = forward(&params, batch, ForwardMode::Eval).unwrap();
        assert_eq!(x, y);
    }

    #[test]
    fn predict_tags_returns_word_level_tags() {
        let tok = train_bpe(&["аб вг", "аб"], 100, 1).unwrap();
        let tagset = TagSet::from_tags(["NOUN", "VERB", "ADJ"].map(|t| Tag::new(t).unwrap()));
        let mut config = tiny_config();
        config.vocab_size = tok.vocab_size();
        let params = init_model(&config).unwrap();
        let out = predict_tags(&params, &tok, &tagset, &["аб", "вг"]).unwrap();
        assert_eq!(out.len(), 2);
        assert_eq!(out.words(), ["аб", "вг"]);
        for tag in out.tags() {
            assert!(tagset.id_of(tag).is_some());
        }
        // Deterministic across calls.
        let again = predict_tags(&params, &tok, &tagset, &["аб", "вг"]).unwrap();
        assert_eq!(out, again);

        let wrong = TagSet::from_tags([Tag::new("NOUN").unwrap()]);
        assert!(matches!(
            predict_tags(&params, &tok, &wrong, &["аб"]),
            Err(ModelError::TagSetSize { expected: 3, found: 1 })
        ));
    }
}
