//! Training: masked cross-entropy, manual reverse-mode gradients, Adam
//! with global-norm clipping, masked-language-model pretraining, and the
//! supervised training loop.
//!
//! Everything is deterministic given the seeds in [`TrainConfig`] and
//! [`MlmConfig`]: running the same training twice produces bit-identical
//! parameters (and therefore byte-identical model files).

use std::time::Instant;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Corpus, TagSet};
use crate::metrics::{evaluate, MetricsError};
use crate::model::encoder;
use crate::model::{
    init_model, add_mlm_head, ForwardMode, Head, ModelConfig, ModelError, ModelParams,
};
use crate::tokenizer::{
    Encoding, LengthMode, Tokenizer, TokenizerError, IGNORE_LABEL, MASK_ID, SPECIAL_TOKENS,
};

/// Errors produced while training.
#[derive(Debug, Error)]
pub enum TrainError {
    /// A structurally impossible optimiser or masking configuration.
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    /// Nothing to train on.
    #[error("the training set is empty")]
    EmptyTrainingSet,
    /// Batch tensors and label tensors disagree in shape.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    /// A supervised label outside the head's class range.
    #[error("label {label} is out of range for {classes} classes")]
    LabelOutOfRange { label: i32, classes: usize },
    /// A loss over zero supervised positions is undefined.
    #[error("no supervised positions in the batch")]
    NoSupervisedPositions,
    /// Training diverged into NaN or infinity.
    #[error("non-finite value during training: {0}")]
    NonFinite(String),
    /// The model failed (bad batch, bad config, I/O).
    #[error(transparent)]
    Model(#[from] ModelError),
    /// Tokenisation failed while preparing training data.
    #[error(transparent)]
    Tokenize(#[from] TokenizerError),
    /// Validation scoring failed.
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

/// Optimiser and loop hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Gradients are rescaled so their global L2 norm never exceeds this.
    pub clip_norm: f64,
    /// Seed for epoch shuffling and dropout draws.
    pub seed: u64,
    /// Reshuffle the training set every epoch (batches still deterministic).
    pub shuffle: bool,
}

impl Default for TrainConfig {
    fn default() -> TrainConfig {
        TrainConfig {
            epochs: 10,
            batch_size: 32,
            learning_rate: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            clip_norm: 1.0,
            seed: 42,
            shuffle: true,
        }
    }
}

impl TrainConfig {
    /// Checks the hyperparameters are usable.
    pub fn validate(&self) -> Result<(), TrainError> {
        let fail = |msg: String| Err(TrainError::InvalidConfig(msg));
        if self.epochs == 0 {
            return fail("epochs must be at least 1".to_string());
        }
        if self.batch_size == 0 {
            return fail("batch_size must be at least 1".to_string());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return fail(format!("learning_rate {} must be positive", self.learning_rate));
        }
        for (name, beta) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&beta) {
                return fail(format!("{name} {beta} must lie in [0, 1)"));
            }
        }
        if !(self.epsilon > 0.0) {
            return fail(format!("epsilon {} must be positive", self.epsilon));
        }
        if !(self.clip_norm > 0.0) {
            return fail(format!("clip_norm {} must be positive", self.clip_norm));
        }
        Ok(())
    }
}

/// Adam's first/second-moment accumulators and step counter. The moment
/// bags share the parameter bag's shapes and traversal order.
pub struct OptimizerState {
    pub m: ModelParams,
    pub v: ModelParams,
    pub t: u64,
}

/// Fresh all-zero Adam state for the given parameters.
pub fn init_optimizer(params: &ModelParams) -> OptimizerState {
    OptimizerState { m: params.zeros_like(), v: params.zeros_like(), t: 0 }
}

/// Mean masked cross-entropy over `logits` (`[n, classes]`) against flat
/// `labels` (`IGNORE_LABEL` rows excluded), together with the loss gradient
/// in the logits: `(softmax − onehot) / supervised_count` at supervised
/// rows, zero elsewhere.
pub fn cross_entropy(
    logits: &Array2<f64>,
    labels: &[i32],
) -> Result<(f64, Array2<f64>), TrainError> {
    let (n, classes) = logits.dim();
    if labels.len() != n {
        return Err(TrainError::ShapeMismatch(format!(
            "{n} logit rows vs {} labels",
            labels.len()
        )));
    }
    let supervised = labels.iter().filter(|&&l| l != IGNORE_LABEL).count();
    if supervised == 0 {
        return Err(TrainError::NoSupervisedPositions);
    }
    let scale = 1.0 / supervised as f64;
    let mut loss = 0.0;
    let mut grad = Array2::zeros((n, classes));
    for (row, &label) in labels.iter().enumerate() {
        if label == IGNORE_LABEL {
            continue;
        }
        if label < 0 || label as usize >= classes {
            return Err(TrainError::LabelOutOfRange { label, classes });
        }
        let probs = crate::model::softmax(logits.row(row).as_slice().expect("contiguous row"));
        let target = label as usize;
        loss -= probs[target].ln() * scale;
        for k in 0..classes {
            grad[[row, k]] = (probs[k] - f64::from(k == target)) * scale;
        }
    }
    Ok((loss, grad))
}

/// One forward/backward pass over a batch: returns the masked
/// cross-entropy loss and a full gradient bag.
///
/// `labels` is one `IGNORE_LABEL`-padded row per encoding, aligned
/// position-by-position. Dropout follows `mode` exactly as in inference.
pub fn compute_gradients(
    params: &ModelParams,
    batch: &[Encoding],
    labels: &[Vec<i32>],
    head: Head,
    mode: ForwardMode,
) -> Result<(f64, ModelParams), TrainError> {
    if head == Head::Mlm && !params.has_mlm_head() {
        return Err(TrainError::Model(ModelError::InvalidConfig(
            "model has no MLM head".to_string(),
        )));
    }
    if labels.len() != batch.len() {
        return Err(TrainError::ShapeMismatch(format!(
            "{} encodings vs {} label rows",
            batch.len(),
            labels.len()
        )));
    }
    let packed = encoder::pack(params, batch)?;
    let mut flat = Vec::with_capacity(packed.b * packed.t);
    for (i, row) in labels.iter().enumerate() {
        if row.len() != packed.t {
            return Err(TrainError::ShapeMismatch(format!(
                "label row {i} has {} entries, encodings have {}",
                row.len(),
                packed.t
            )));
        }
        flat.extend_from_slice(row);
    }
    let plan = match mode {
        ForwardMode::Eval => encoder::DropoutPlan::disabled(),
        ForwardMode::Train { dropout_seed } => {
            encoder::DropoutPlan::seeded(params.config.dropout_rate, dropout_seed)
        }
    };
    let (out, cache) = encoder::forward_pass(params, &packed, plan, head);
    let (loss, dout) = cross_entropy(&out, &flat)?;
    let grads = encoder::backward_pass(params, &packed, &cache, &dout, head);
    Ok((loss, grads))
}

/// Global L2 norm over every tensor in the bag.
pub fn global_norm(grads: &ModelParams) -> f64 {
    grads
        .named_tensors()
        .into_iter()
        .map(|(_, t)| t.iter().map(|&x| x * x).sum::<f64>())
        .sum::<f64>()
        .sqrt()
}

/// Rescales `grads` in place so the global norm is at most `clip_norm`.
/// Returns the pre-clip norm.
pub fn clip_gradients(grads: &mut ModelParams, clip_norm: f64) -> f64 {
    let norm = global_norm(grads);
    if norm > clip_norm {
        let scale = clip_norm / norm;
        for (_, tensor) in grads.named_tensors_mut() {
            tensor.mapv_inplace(|x| x * scale);
        }
    }
    norm
}

/// One optimiser step: clip the gradient's global norm, apply
/// bias-corrected Adam, and quantise the parameters through `f32`.
/// Returns the pre-clip gradient norm.
pub fn adam_step(
    params: &mut ModelParams,
    opt: &mut OptimizerState,
    mut grads: ModelParams,
    config: &TrainConfig,
) -> Result<f64, TrainError> {
    let norm = clip_gradients(&mut grads, config.clip_norm);
    if !norm.is_finite() {
        return Err(TrainError::NonFinite("gradient norm".to_string()));
    }
    opt.t += 1;
    let bc1 = 1.0 - config.beta1.powi(opt.t as i32);
    let bc2 = 1.0 - config.beta2.powi(opt.t as i32);
    let mut p = params.named_tensors_mut();
    let g = grads.named_tensors();
    let mut m = opt.m.named_tensors_mut();
    let mut v = opt.v.named_tensors_mut();
    for i in 0..p.len() {
        let (pt, gt, mt, vt) = (&mut p[i].1, &g[i].1, &mut m[i].1, &mut v[i].1);
        ndarray::Zip::from(&mut **pt)
            .and(&**gt)
            .and(&mut **mt)
            .and(&mut **vt)
            .for_each(|theta, &grad, m_val, v_val| {
                *m_val = config.beta1 * *m_val + (1.0 - config.beta1) * grad;
                *v_val = config.beta2 * *v_val + (1.0 - config.beta2) * grad * grad;
                let m_hat = *m_val / bc1;
                let v_hat = *v_val / bc2;
                *theta -= config.learning_rate * m_hat / (v_hat.sqrt() + config.epsilon);
            });
    }
    drop((p, m, v));
    params.quantize_f32();
    if let Some(name) = params.first_non_finite() {
        return Err(TrainError::NonFinite(name));
    }
    Ok(norm)
}

/// Masked-language-model corruption settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MlmConfig {
    /// Fraction of eligible (real, non-special) positions selected.
    pub mask_prob: f64,
    /// Of the selected: probability of replacement with `[MASK]`.
    pub mask_token_prob: f64,
    /// Of the selected: probability of replacement with a random content token.
    pub random_token_prob: f64,
    /// Of the selected: probability of keeping the original token.
    pub keep_prob: f64,
    pub seed: u64,
}

impl Default for MlmConfig {
    fn default() -> MlmConfig {
        MlmConfig {
            mask_prob: 0.15,
            mask_token_prob: 0.8,
            random_token_prob: 0.1,
            keep_prob: 0.1,
            seed: 42,
        }
    }
}

impl MlmConfig {
    /// Checks the probabilities are a valid corruption scheme.
    pub fn validate(&self) -> Result<(), TrainError> {
        let fail = |msg: String| Err(TrainError::InvalidConfig(msg));
        if !(self.mask_prob > 0.0 && self.mask_prob <= 1.0) {
            return fail(format!("mask_prob {} must lie in (0, 1]", self.mask_prob));
        }
        for (name, p) in [
            ("mask_token_prob", self.mask_token_prob),
            ("random_token_prob", self.random_token_prob),
            ("keep_prob", self.keep_prob),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return fail(format!("{name} {p} must lie in [0, 1]"));
            }
        }
        let sum = self.mask_token_prob + self.random_token_prob + self.keep_prob;
        if (sum - 1.0).abs() > 1e-9 {
            return fail(format!("mask/random/keep probabilities sum to {sum}, expected 1"));
        }
        Ok(())
    }
}

fn is_special(id: u32) -> bool {
    (id as usize) < SPECIAL_TOKENS.len()
}

/// Applies BERT-style corruption using the caller's RNG stream: each real,
/// non-special position is selected with `mask_prob`; selected positions
/// become `[MASK]` / a random content token / stay unchanged with the
/// configured odds, and carry their original id as the label. Everything
/// else is labelled `IGNORE_LABEL`. If the roll selects nothing, one
/// eligible position is forced so the example always trains.
pub fn mask_tokens_with(
    enc: &Encoding,
    vocab_size: usize,
    config: &MlmConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(Encoding, Vec<i32>), TrainError> {
    config.validate()?;
    let content = SPECIAL_TOKENS.len() as u32..vocab_size as u32;
    if content.is_empty() {
        return Err(TrainError::InvalidConfig(format!(
            "vocab_size {vocab_size} has no content tokens to sample"
        )));
    }
    let eligible: Vec<usize> = enc
        .ids
        .iter()
        .zip(&enc.attention_mask)
        .enumerate()
        .filter(|(_, (&id, &m))| m != 0 && !is_special(id))
        .map(|(i, _)| i)
        .collect();

    let mut corrupted = enc.clone();
    corrupted.label_ids = None;
    let mut labels = vec![IGNORE_LABEL; enc.ids.len()];
    let mut selected: Vec<usize> =
        eligible.iter().copied().filter(|_| rng.random::<f64>() < config.mask_prob).collect();
    if selected.is_empty() && !eligible.is_empty() {
        selected.push(eligible[rng.random_range(0..eligible.len())]);
    }
    for pos in selected {
        labels[pos] = enc.ids[pos] as i32;
        let roll: f64 = rng.random();
        if roll < config.mask_token_prob {
            corrupted.ids[pos] = MASK_ID;
        } else if roll < config.mask_token_prob + config.random_token_prob {
            corrupted.ids[pos] = rng.random_range(content.clone());
        } // else: keep the original token.
    }
    Ok((corrupted, labels))
}

/// [`mask_tokens_with`] driven by a fresh RNG seeded from the config.
pub fn mask_tokens(
    enc: &Encoding,
    vocab_size: usize,
    config: &MlmConfig,
) -> Result<(Encoding, Vec<i32>), TrainError> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    mask_tokens_with(enc, vocab_size, config, &mut rng)
}

/// One epoch's summary line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based epoch number.
    pub epoch: usize,
    /// Supervised-position-weighted mean training loss.
    pub train_loss: f64,
    /// Support-weighted validation F1 after this epoch.
    pub val_weighted_f1: f64,
    /// Wall-clock seconds spent on this epoch (training + validation).
    pub wall_time_s: f64,
}

/// The full per-epoch trace of one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub records: Vec<EpochRecord>,
    /// 1-based epoch whose checkpoint was kept.
    pub best_epoch: usize,
    pub best_val_f1: f64,
}

impl TrainHistory {
    /// One JSON object per line, ending with a newline.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for record in &self.records {
            out.push_str(&serde_json::to_string(record).expect("record serialises"));
            out.push('\n');
        }
        out
    }
}

/// Cuts every tensor in the encoding (and its label row) down to `len`
/// positions, so a batch only pays for its longest real sequence.
fn trim(enc: &Encoding, labels: &[i32], len: usize) -> (Encoding, Vec<i32>) {
    let trimmed = Encoding {
        ids: enc.ids[..len].to_vec(),
        attention_mask: enc.attention_mask[..len].to_vec(),
        word_starts: enc.word_starts.clone(),
        label_ids: None,
    };
    (trimmed, labels[..len].to_vec())
}

/// Runs the (shuffle → batch → gradients → Adam) epoch over pre-encoded
/// examples, returning the supervised-position-weighted mean loss.
fn run_epoch(
    params: &mut ModelParams,
    opt: &mut OptimizerState,
    examples: &[(Encoding, Vec<i32>)],
    head: Head,
    config: &TrainConfig,
    shuffle_rng: &mut ChaCha8Rng,
    dropout_rng: &mut ChaCha8Rng,
) -> Result<f64, TrainError> {
    let mut order: Vec<usize> = (0..examples.len()).collect();
    if config.shuffle {
        order.shuffle(shuffle_rng);
    }
    let mut loss_sum = 0.0;
    let mut position_sum = 0usize;
    for chunk in order.chunks(config.batch_size) {
        let longest = chunk
            .iter()
            .map(|&i| examples[i].0.real_len())
            .max()
            .expect("chunks are non-empty");
        let mut batch = Vec::with_capacity(chunk.len());
        let mut labels = Vec::with_capacity(chunk.len());
        for &i in chunk {
            let (enc, lab) = trim(&examples[i].0, &examples[i].1, longest);
            batch.push(enc);
            labels.push(lab);
        }
        let supervised: usize = labels
            .iter()
            .flatten()
            .filter(|&&l| l != IGNORE_LABEL)
            .count();
        let mode = ForwardMode::Train { dropout_seed: dropout_rng.random() };
        let (loss, grads) = compute_gradients(params, &batch, &labels, head, mode)?;
        if !loss.is_finite() {
            return Err(TrainError::NonFinite("training loss".to_string()));
        }
        adam_step(params, opt, grads, config)?;
        loss_sum += loss * supervised as f64;
        position_sum += supervised;
    }
    Ok(loss_sum / position_sum as f64)
}

/// Trains the classifier head (and the whole backbone) on a tagged corpus.
///
/// Sentences are encoded once up front (whole-word truncation at the
/// model's `max_len`); every epoch shuffles, batches, and optimises, then
/// scores the validation corpus. The parameters returned are the
/// checkpoint of the epoch with the strictly highest validation weighted
/// F1 (earliest wins ties), not necessarily the final epoch.
pub fn train_token_classifier(
    init: ModelParams,
    train: &Corpus,
    val: &Corpus,
    tokenizer: &Tokenizer,
    tagset: &TagSet,
    config: &TrainConfig,
) -> Result<(ModelParams, TrainHistory), TrainError> {
    config.validate()?;
    if train.is_empty() {
        return Err(TrainError::EmptyTrainingSet);
    }
    if tagset.len() != init.config.n_tags {
        return Err(TrainError::Model(ModelError::TagSetSize {
            expected: init.config.n_tags,
            found: tagset.len(),
        }));
    }

    let mut examples = Vec::with_capacity(train.len());
    for sentence in &train.sentences {
        let enc = tokenizer.encode_tagged(
            sentence,
            tagset,
            init.config.max_len,
            LengthMode::Truncate,
        )?;
        let labels = enc.label_ids.clone().expect("tagged encoding carries labels");
        examples.push((enc, labels));
    }

    let mut params = init;
    let mut opt = init_optimizer(&params);
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_d20f);
    let mut best_params = params.clone();
    let mut best_f1 = f64::NEG_INFINITY;
    let mut best_epoch = 0;
    let mut records = Vec::with_capacity(config.epochs);
    for epoch in 1..=config.epochs {
        let started = Instant::now();
        let train_loss = run_epoch(
            &mut params,
            &mut opt,
            &examples,
            Head::Classifier,
            config,
            &mut shuffle_rng,
            &mut dropout_rng,
        )?;
        let val_weighted_f1 = evaluate(&params, tokenizer, tagset, val)?.weighted_f1;
        if val_weighted_f1 > best_f1 {
            best_f1 = val_weighted_f1;
            best_epoch = epoch;
            best_params = params.clone();
        }
        records.push(EpochRecord {
            epoch,
            train_loss,
            val_weighted_f1,
            wall_time_s: started.elapsed().as_secs_f64(),
        });
    }
    let history = TrainHistory { records, best_epoch, best_val_f1: best_f1 };
    Ok((best_params, history))
}

/// Pretrains a fresh model with the masked-language-model objective over
/// raw (untagged) sentences. Corruption is redrawn every epoch. Returns
/// the final parameters — MLM head still attached, classifier head at its
/// initialisation — and the per-epoch mean losses.
pub fn pretrain_mlm<S: AsRef<str>>(
    model_config: &ModelConfig,
    tokenizer: &Tokenizer,
    sentences: &[Vec<S>],
    mlm: &MlmConfig,
    config: &TrainConfig,
) -> Result<(ModelParams, Vec<f64>), TrainError> {
    config.validate()?;
    mlm.validate()?;
    if sentences.is_empty() {
        return Err(TrainError::EmptyTrainingSet);
    }

    let mut encodings = Vec::with_capacity(sentences.len());
    for words in sentences {
        encodings.push(tokenizer.encode_words(words, model_config.max_len, LengthMode::Truncate)?);
    }

    let mut params = init_model(model_config)?;
    add_mlm_head(&mut params);
    let mut opt = init_optimizer(&params);
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_d20f);
    let mut mask_rng = ChaCha8Rng::seed_from_u64(mlm.seed);
    let mut losses = Vec::with_capacity(config.epochs);
    for _ in 0..config.epochs {
        // Fresh corruption each epoch: the model sees new holes in the
        // same sentences.
        let mut examples = Vec::with_capacity(encodings.len());
        for enc in &encodings {
            examples.push(mask_tokens_with(enc, tokenizer.vocab_size(), mlm, &mut mask_rng)?);
        }
        let loss = run_epoch(
            &mut params,
            &mut opt,
            &examples,
            Head::Mlm,
            config,
            &mut shuffle_rng,
            &mut dropout_rng,
        )?;
        losses.push(loss);
    }
    Ok((params, losses))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::parse_conll;
    use crate::corpus::tagset_of;
    use crate::model::forward;
    use crate::tokenizer::{train_bpe, CLS_ID, PAD_ID, SEP_ID};
    use ndarray::arr2;

    fn tiny_config() -> ModelConfig {
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
    fn cross_entropy_known_values() {
        // One row, logits [ln 2, 0] → softmax [2/3, 1/3].
        let logits = arr2(&[[2.0f64.ln(), 0.0]]);
        let (loss, grad) = cross_entropy(&logits, &[0]).unwrap();
        assert!((loss + (2.0 / 3.0f64).ln()).abs() < 1e-12);
        assert!((grad[[0, 0]] - (2.0 / 3.0 - 1.0)).abs() < 1e-12);
        assert!((grad[[0, 1]] - 1.0 / 3.0).abs() < 1e-12);

        // Gradient rows each sum to ~0 (softmax minus one-hot).
        let logits = arr2(&[[0.3, -1.2, 0.8], [2.0, 0.0, -2.0]]);
        let (_, grad) = cross_entropy(&logits, &[2, 0]).unwrap();
        for row in grad.rows() {
            assert!(row.sum().abs() < 1e-12);
        }
    }

    #[test]
    fn cross_entropy_skips_ignored_rows() {
        let logits = arr2(&[[2.0f64.ln(), 0.0], [5.0, -5.0]]);
        let (loss_masked, grad) = cross_entropy(&logits, &[0, IGNORE_LABEL]).unwrap();
        let single = arr2(&[[2.0f64.ln(), 0.0]]);
        let (loss_single, _) = cross_entropy(&single, &[0]).unwrap();
        assert!((loss_masked - loss_single).abs() < 1e-12);
        assert!(grad.row(1).iter().all(|&x| x == 0.0), "ignored row gets zero grad");
    }

    #[test]
    fn cross_entropy_rejects_bad_labels() {
        let logits = arr2(&[[0.0, 0.0]]);
        assert!(matches!(
            cross_entropy(&logits, &[IGNORE_LABEL]),
            Err(TrainError::NoSupervisedPositions)
        ));
        assert!(matches!(
            cross_entropy(&logits, &[2]),
            Err(TrainError::LabelOutOfRange { label: 2, classes: 2 })
        ));
        assert!(matches!(
            cross_entropy(&logits, &[0, 1]),
            Err(TrainError::ShapeMismatch(_))
        ));
    }

    #[test]
    fn clipping_caps_the_global_norm() {
        let params = init_model(&tiny_config()).unwrap();
        let mut grads = params.zeros_like();
        // Two entries 3 and 4 → global norm 5.
        grads.classifier_bias[[0, 0]] = 3.0;
        grads.final_ln.bias[[0, 1]] = 4.0;
        assert!((global_norm(&grads) - 5.0).abs() < 1e-12);

        let pre = clip_gradients(&mut grads, 1.0);
        assert!((pre - 5.0).abs() < 1e-12);
        assert!((global_norm(&grads) - 1.0).abs() < 1e-12);
        assert!((grads.classifier_bias[[0, 0]] - 0.6).abs() < 1e-12);

        // Under the threshold nothing changes.
        let mut small = params.zeros_like();
        small.classifier_bias[[0, 0]] = 0.25;
        clip_gradients(&mut small, 1.0);
        assert_eq!(small.classifier_bias[[0, 0]], 0.25);
    }

    #[test]
    fn adam_first_step_moves_by_learning_rate() {
        let mut params = init_model(&tiny_config()).unwrap();
        let before = params.classifier_bias[[0, 0]];
        let mut opt = init_optimizer(&params);
        let mut grads = params.zeros_like();
        grads.classifier_bias[[0, 0]] = 0.5;
        let config = TrainConfig { learning_rate: 0.01, ..TrainConfig::default() };
        adam_step(&mut params, &mut opt, grads, &config).unwrap();
        // With bias correction, step 1 moves by ≈ lr·g/(|g|+ε) ≈ lr.
        let moved = before - params.classifier_bias[[0, 0]];
        assert!((moved - 0.01).abs() < 1e-6, "moved {moved}");
        assert_eq!(opt.t, 1);
        // Untouched parameters: moments stay zero, values unchanged.
        assert_eq!(params.token_embeddings, init_model(&tiny_config()).unwrap().token_embeddings);
        // Quantisation holds after the step.
        assert!(params
            .named_tensors()
            .iter()
            .all(|(_, t)| t.iter().all(|&x| x == (x as f32 as f64))));
    }

    #[test]
    fn adam_rejects_and_reports_divergence() {
        let mut params = init_model(&tiny_config()).unwrap();
        let mut opt = init_optimizer(&params);
        let mut grads = params.zeros_like();
        grads.classifier_bias[[0, 0]] = f64::NAN;
        let config = TrainConfig::default();
        assert!(matches!(
            adam_step(&mut params, &mut opt, grads, &config),
            Err(TrainError::NonFinite(_))
        ));
    }

    #[test]
    fn train_config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        for breaker in [
            |c: &mut TrainConfig| c.epochs = 0,
            |c: &mut TrainConfig| c.batch_size = 0,
            |c: &mut TrainConfig| c.learning_rate = 0.0,
            |c: &mut TrainConfig| c.learning_rate = f64::NAN,
            |c: &mut TrainConfig| c.beta1 = 1.0,
            |c: &mut TrainConfig| c.beta2 = -0.1,
            |c: &mut TrainConfig| c.epsilon = 0.0,
            |c: &mut TrainConfig| c.clip_norm = 0.0,
        ] {
            let mut config = TrainConfig::default();
            breaker(&mut config);
            assert!(config.validate().is_err(), "expected invalid: {config:?}");
        }
    }

    #[test]
    fn mlm_config_validation() {
        assert!(MlmConfig::default().validate().is_ok());
        let mut bad = MlmConfig::default();
        bad.mask_prob = 0.0;
        assert!(bad.validate().is_err());
        let mut bad = MlmConfig::default();
        bad.keep_prob = 0.3; // probabilities no longer sum to 1
        assert!(bad.validate().is_err());
    }

    fn demo_tokenizer() -> Tokenizer {
        train_bpe(&["аб вг де", "аб де", "вг аб"], 60, 1).unwrap()
    }

    #[test]
    fn mask_tokens_respects_structure() {
        let tok = demo_tokenizer();
        let enc = tok.encode_words(&["аб", "вг", "де"], 16, LengthMode::Strict).unwrap();
        let config = MlmConfig { seed: 9, ..MlmConfig::default() };
        let (corrupted, labels) = mask_tokens(&enc, tok.vocab_size(), &config).unwrap();
        let (again, labels_again) = mask_tokens(&enc, tok.vocab_size(), &config).unwrap();
        assert_eq!(corrupted, again, "same seed, same corruption");
        assert_eq!(labels, labels_again);

        assert_eq!(labels.len(), enc.ids.len());
        assert!(labels.iter().any(|&l| l != IGNORE_LABEL), "at least one position trains");
        for (i, (&label, &new_id)) in labels.iter().zip(&corrupted.ids).enumerate() {
            let old_id = enc.ids[i];
            if label == IGNORE_LABEL {
                assert_eq!(new_id, old_id, "unselected positions keep their token");
            } else {
                assert_eq!(label as u32, old_id, "label is the original token");
                assert!(enc.attention_mask[i] != 0, "only real positions selected");
                assert!(old_id as usize >= SPECIAL_TOKENS.len(), "specials never selected");
                // Replacement is [MASK], a content token, or the original.
                assert!(new_id == MASK_ID || new_id as usize >= SPECIAL_TOKENS.len());
            }
        }
        // Structural positions are untouched.
        assert_eq!(corrupted.ids[0], CLS_ID);
        assert!(corrupted.ids.contains(&SEP_ID));
        for (i, &m) in enc.attention_mask.iter().enumerate() {
            if m == 0 {
                assert_eq!(corrupted.ids[i], PAD_ID);
                assert_eq!(labels[i], IGNORE_LABEL);
            }
        }
    }

    #[test]
    fn mask_tokens_hits_roughly_the_configured_rate() {
        let tok = demo_tokenizer();
        let enc = tok.encode_words(&["аб", "вг", "де"], 16, LengthMode::Strict).unwrap();
        let eligible = enc
            .ids
            .iter()
            .zip(&enc.attention_mask)
            .filter(|(&id, &m)| m != 0 && id as usize >= SPECIAL_TOKENS.len())
            .count();
        let config = MlmConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut selected = 0usize;
        let rounds = 2000;
        for _ in 0..rounds {
            let (_, labels) = mask_tokens_with(&enc, tok.vocab_size(), &config, &mut rng).unwrap();
            selected += labels.iter().filter(|&&l| l != IGNORE_LABEL).count();
        }
        let rate = selected as f64 / (rounds * eligible) as f64;
        // Forcing one position when the roll selects none skews the rate up
        // slightly on such short sentences; allow a generous band.
        assert!(
            (0.12..=0.45).contains(&rate),
            "selection rate {rate} far from mask_prob {}",
            config.mask_prob
        );
    }

    fn tiny_training_setup() -> (Tokenizer, TagSet, Corpus, ModelConfig) {
        let text = "аб\tNOUN\nвг\tVERB\n\nде\tADJ\nаб\tNOUN\n\nвг\tVERB\nде\tADJ\n";
        let corpus = parse_conll(text).unwrap();
        let tok = train_bpe(&["аб вг де"], 60, 1).unwrap();
        let tagset = tagset_of(&corpus);
        let mut config = tiny_config();
        config.vocab_size = tok.vocab_size();
        config.n_tags = tagset.len();
        (tok, tagset, corpus, config)
    }

    #[test]
    fn training_reduces_loss_and_is_deterministic() {
        let (tok, tagset, corpus, config) = tiny_training_setup();
        let train_config = TrainConfig {
            epochs: 30,
            batch_size: 2,
            learning_rate: 5e-3,
            seed: 1,
            ..TrainConfig::default()
        };
        let init = init_model(&config).unwrap();
        let (best, history) =
            train_token_classifier(init.clone(), &corpus, &corpus, &tok, &tagset, &train_config)
                .unwrap();
        assert_eq!(history.records.len(), 30);
        let first = history.records.first().unwrap();
        let last = history.records.last().unwrap();
        assert!(
            last.train_loss < first.train_loss,
            "loss should fall: {} → {}",
            first.train_loss,
            last.train_loss
        );
        assert!(history.best_val_f1 >= first.val_weighted_f1);
        assert_eq!(
            history.best_val_f1,
            history.records[history.best_epoch - 1].val_weighted_f1
        );
        // The kept checkpoint really is the best epoch's parameters: its
        // validation score must reproduce the recorded best.
        let report = evaluate(&best, &tok, &tagset, &corpus).unwrap();
        assert!((report.weighted_f1 - history.best_val_f1).abs() < 1e-12);

        // Bit-exact determinism across reruns.
        let (best2, history2) =
            train_token_classifier(init, &corpus, &corpus, &tok, &tagset, &train_config).unwrap();
        assert_eq!(best, best2);
        let strip_time = |h: &TrainHistory| {
            h.records
                .iter()
                .map(|r| (r.epoch, r.train_loss.to_bits(), r.val_weighted_f1.to_bits()))
                .collect::<Vec<_>>()
        };
        assert_eq!(strip_time(&history), strip_time(&history2));
        assert_eq!(history.best_epoch, history2.best_epoch);
    }

    #[test]
    fn training_rejects_bad_inputs() {
        let (tok, tagset, corpus, config) = tiny_training_setup();
        let init = init_model(&config).unwrap();
        let empty = Corpus { sentences: vec![], source_name: "empty".to_string() };
        assert!(matches!(
            train_token_classifier(
                init.clone(),
                &empty,
                &corpus,
                &tok,
                &tagset,
                &TrainConfig::default()
            ),
            Err(TrainError::EmptyTrainingSet)
        ));
        let bad = TrainConfig { epochs: 0, ..TrainConfig::default() };
        assert!(matches!(
            train_token_classifier(init.clone(), &corpus, &corpus, &tok, &tagset, &bad),
            Err(TrainError::InvalidConfig(_))
        ));
        let wrong = TagSet::from_tags([crate::corpus::Tag::new("NOUN").unwrap()]);
        assert!(matches!(
            train_token_classifier(
                init,
                &corpus,
                &corpus,
                &tok,
                &wrong,
                &TrainConfig::default()
            ),
            Err(TrainError::Model(ModelError::TagSetSize { .. }))
        ));
    }

    #[test]
    fn mlm_pretraining_learns_and_keeps_both_heads() {
        let tok = demo_tokenizer();
        let mut config = tiny_config();
        config.vocab_size = tok.vocab_size();
        let sentences: Vec<Vec<&str>> =
            vec![vec!["аб", "вг", "де"], vec!["аб", "де"], vec!["вг", "аб"]];
        let train_config = TrainConfig {
            epochs: 25,
            batch_size: 3,
            learning_rate: 5e-3,
            seed: 2,
            ..TrainConfig::default()
        };
        let mlm = MlmConfig { mask_prob: 0.3, ..MlmConfig::default() };
        let (params, losses) =
            pretrain_mlm(&config, &tok, &sentences, &mlm, &train_config).unwrap();
        assert_eq!(losses.len(), 25);
        assert!(losses.iter().all(|l| l.is_finite()));
        let early: f64 = losses[..5].iter().sum::<f64>() / 5.0;
        let late: f64 = losses[20..].iter().sum::<f64>() / 5.0;
        assert!(late < early, "MLM loss should fall: {early} → {late}");
        assert!(params.has_mlm_head());

        // The pretrained backbone differs from a cold initialisation, and
        // still drives the classifier head.
        let cold = init_model(&config).unwrap();
        assert_ne!(params.token_embeddings, cold.token_embeddings);
        let enc = tok.encode_words(&["аб"], 8, LengthMode::Strict).unwrap();
        let logits = forward(&params, &[enc], ForwardMode::Eval).unwrap();
        assert!(logits.iter().all(|x| x.is_finite()));

        // Deterministic.
        let (params2, losses2) =
            pretrain_mlm(&config, &tok, &sentences, &mlm, &train_config).unwrap();
        assert_eq!(params, params2);
        assert_eq!(losses, losses2);
    }

    #[test]
    fn history_serialises_one_record_per_line() {
        let history = TrainHistory {
            records: vec![
                EpochRecord { epoch: 1, train_loss: 2.5, val_weighted_f1: 0.4, wall_time_s: 0.1 },
                EpochRecord { epoch: 2, train_loss: 1.5, val_weighted_f1: 0.6, wall_time_s: 0.1 },
            ],
            best_epoch: 2,
            best_val_f1: 0.6,
        };
        let jsonl = history.to_jsonl();
        let lines: Vec<&str> = jsonl.lines().collect();
        assert_eq!(lines.len(), 2);
        let parsed: EpochRecord = serde_json::from_str(lines[1]).unwrap();
        assert_eq!(parsed, history.records[1]);
        assert!(jsonl.ends_with('\n'));
    }
}
