//! The on-disk model container (`.sktg`).
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! bytes 0..4   magic "SKTG"
//! bytes 4..8   u32 format version (currently 1)
//! bytes 8..16  u64 metadata byte length
//! ...          metadata JSON (UTF-8): config, tag inventory,
//!              tokenizer SHA-256, tensor manifest
//! ...          tensor payloads: f32 LE, row-major, in manifest order
//! ```
//!
//! The manifest records every tensor's canonical name, shape, and byte
//! range, in the fixed traversal order of [`ModelParams::named_tensors`].
//! Because parameters are quantised through `f32` in memory, a save/load
//! cycle reproduces the parameter bag bit-exactly.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ModelError, ModelParams};
use crate::corpus::{Tag, TagSet};
use crate::model::ModelConfig;

const MAGIC: [u8; 4] = *b"SKTG";
const FORMAT_VERSION: u32 = 1;
const HEADER_LEN: usize = 16;

/// One tensor's entry in the container manifest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorEntry {
    /// Canonical tensor name, e.g. `layers.0.attention.w_q`.
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    /// Byte offset into the payload section.
    pub offset: u64,
    pub byte_len: u64,
}

/// The JSON metadata block of a model container.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ContainerMeta {
    pub config: ModelConfig,
    /// Tag inventory in class-id order (sorted, unique).
    pub tags: Vec<String>,
    /// SHA-256 (hex) of the tokenizer file this model was trained with.
    pub tokenizer_sha256: String,
    pub tensors: Vec<TensorEntry>,
}

/// A model restored from disk.
pub struct LoadedModel {
    pub params: ModelParams,
    pub tagset: TagSet,
    pub tokenizer_sha256: String,
}

fn expected_manifest(params: &ModelParams) -> Vec<TensorEntry> {
    let mut offset = 0u64;
    params
        .named_tensors()
        .into_iter()
        .map(|(name, tensor)| {
            let (rows, cols) = tensor.dim();
            let byte_len = (rows * cols * 4) as u64;
            let entry = TensorEntry { name, rows, cols, offset, byte_len };
            offset += byte_len;
            entry
        })
        .collect()
}

/// Writes a model, its tag inventory, and the tokenizer fingerprint to
/// `path`. Fails on a tag-count mismatch or non-finite parameters; never
/// writes a partial file on error.
pub fn save_model<P: AsRef<Path>>(
    path: P,
    params: &ModelParams,
    tagset: &TagSet,
    tokenizer_sha256: &str,
) -> Result<(), ModelError> {
    params.config.validate()?;
    if tagset.len() != params.config.n_tags {
        return Err(ModelError::TagSetSize {
            expected: params.config.n_tags,
            found: tagset.len(),
        });
    }
    if let Some(name) = params.first_non_finite() {
        return Err(ModelError::NonFinite(name));
    }

    let meta = ContainerMeta {
        config: params.config.clone(),
        tags: tagset.tags().iter().map(|t| t.to_string()).collect(),
        tokenizer_sha256: tokenizer_sha256.to_string(),
        tensors: expected_manifest(params),
    };
    let meta_json = serde_json::to_vec(&meta)?;

    let payload_len: usize = meta.tensors.iter().map(|t| t.byte_len as usize).sum();
    let mut bytes = Vec::with_capacity(HEADER_LEN + meta_json.len() + payload_len);
    bytes.extend_from_slice(&MAGIC);
    bytes.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    bytes.extend_from_slice(&(meta_json.len() as u64).to_le_bytes());
    bytes.extend_from_slice(&meta_json);
    for (_, tensor) in params.named_tensors() {
        for &x in tensor.iter() {
            bytes.extend_from_slice(&(x as f32).to_le_bytes());
        }
    }
    std::fs::write(path, bytes)?;
    Ok(())
}

fn parse_header(bytes: &[u8]) -> Result<(ContainerMeta, usize), ModelError> {
    if bytes.len() < HEADER_LEN {
        return Err(ModelError::CorruptFile("file shorter than the fixed header".to_string()));
    }
    if bytes[0..4] != MAGIC {
        return Err(ModelError::UnsupportedFile("not a model container (bad magic)".to_string()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(ModelError::UnsupportedFile(format!(
            "container version {version}, this build reads version {FORMAT_VERSION}"
        )));
    }
    let meta_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let payload_start = HEADER_LEN
        .checked_add(meta_len)
        .filter(|&end| end <= bytes.len())
        .ok_or_else(|| ModelError::CorruptFile("metadata length exceeds file size".to_string()))?;
    let meta: ContainerMeta = serde_json::from_slice(&bytes[HEADER_LEN..payload_start])?;
    Ok((meta, payload_start))
}

/// Reads only the metadata block of a container (cheap: tensor payloads are
/// not decoded).
pub fn read_metadata<P: AsRef<Path>>(path: P) -> Result<ContainerMeta, ModelError> {
    let bytes = std::fs::read(path)?;
    let (meta, _) = parse_header(&bytes)?;
    Ok(meta)
}

/// Loads a full model, verifying the manifest against the configuration,
/// the payload bounds, and value finiteness.
pub fn load_model<P: AsRef<Path>>(path: P) -> Result<LoadedModel, ModelError> {
    let bytes = std::fs::read(path)?;
    let (meta, payload_start) = parse_header(&bytes)?;
    meta.config.validate()?;

    // Tag inventory: must be sorted, unique, and sized to the classifier.
    let mut tags = Vec::with_capacity(meta.tags.len());
    for name in &meta.tags {
        let tag = Tag::new(name)
            .map_err(|e| ModelError::CorruptFile(format!("tag inventory: {e}")))?;
        tags.push(tag);
    }
    let tagset = TagSet::from_tags(tags);
    let stored: Vec<String> = meta.tags.clone();
    let rebuilt: Vec<String> = tagset.tags().iter().map(|t| t.to_string()).collect();
    if stored != rebuilt {
        return Err(ModelError::CorruptFile(
            "tag inventory is not sorted and unique".to_string(),
        ));
    }
    if tagset.len() != meta.config.n_tags {
        return Err(ModelError::CorruptFile(format!(
            "tag inventory has {} tags but the config classifies {}",
            tagset.len(),
            meta.config.n_tags
        )));
    }

    let with_mlm = meta.tensors.iter().any(|t| t.name == "mlm_head.weight");
    let mut params = ModelParams::zeros(&meta.config, with_mlm);
    let expected = expected_manifest(&params);
    if meta.tensors != expected {
        return Err(ModelError::CorruptFile(
            "tensor manifest does not match the configured architecture".to_string(),
        ));
    }

    let payload = &bytes[payload_start..];
    let total: usize = expected.iter().map(|t| t.byte_len as usize).sum();
    if payload.len() != total {
        return Err(ModelError::CorruptFile(format!(
            "payload holds {} bytes, manifest expects {total}",
            payload.len()
        )));
    }

    for (entry, (_, tensor)) in expected.iter().zip(params.named_tensors_mut()) {
        let start = entry.offset as usize;
        let chunk = &payload[start..start + entry.byte_len as usize];
        for (value, raw) in tensor.iter_mut().zip(chunk.chunks_exact(4)) {
            *value = f64::from(f32::from_le_bytes(raw.try_into().expect("4 bytes")));
        }
    }
    if let Some(name) = params.first_non_finite() {
        return Err(ModelError::NonFinite(name));
    }

    Ok(LoadedModel { params, tagset, tokenizer_sha256: meta.tokenizer_sha256 })
}
