//! Binary checkpoint format.
//!
//! ```text
//! magic      8 bytes  "TKDNCKPT"
//! version    u32 LE
//! header_len u32 LE
//! header     JSON {format_version, config, segments, content_digest}
//! values     little-endian IEEE-754, width from config.precision, segment order
//! ```
//!
//! `content_digest` is SHA-256 over the canonical header without the digest
//! followed by the value bytes.

use std::fs;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::{ModelConfig, Precision};
use super::params::{ParameterVector, Segment};
use super::transformer::LanguageModel;
use crate::error::{Error, Result};
use crate::fsutil::write_atomic;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"TKDNCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    format_version: u32,
    config: ModelConfig,
    segments: Vec<Segment>,
    #[serde(default)]
    content_digest: String,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub params: ParameterVector,
}

impl Checkpoint {
    pub fn into_model(self) -> Result<LanguageModel> {
        LanguageModel::from_params(self.config, self.params)
    }
}

fn encode_values(values: &[f64], precision: Precision) -> Vec<u8> {
    let mut out = Vec::with_capacity(values.len() * precision.width());
    for &v in values {
        match precision {
            Precision::F32 => out.extend_from_slice(&(v as f32).to_le_bytes()),
            Precision::F64 => out.extend_from_slice(&v.to_le_bytes()),
        }
    }
    out
}

fn digest(header: &Header, value_bytes: &[u8]) -> Result<String> {
    let canonical = serde_json::to_vec(&Header {
        format_version: header.format_version,
        config: header.config.clone(),
        segments: header.segments.clone(),
        content_digest: String::new(),
    })?;
    let mut h = Sha256::new();
    h.update(&canonical);
    h.update(value_bytes);
    Ok(hex::encode(h.finalize()))
}

pub fn encode_checkpoint(config: &ModelConfig, params: &ParameterVector) -> Result<Vec<u8>> {
    encode_with_version(config, params, CHECKPOINT_VERSION)
}

fn encode_with_version(config: &ModelConfig, params: &ParameterVector, version: u32) -> Result<Vec<u8>> {
    let values = encode_values(params.values(), config.precision);
    let mut header = Header {
        format_version: version,
        config: config.clone(),
        segments: params.segments().as_ref().clone(),
        content_digest: String::new(),
    };
    header.content_digest = digest(&header, &values)?;
    let header_bytes = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(16 + header_bytes.len() + values.len());
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&version.to_le_bytes());
    out.extend_from_slice(&(header_bytes.len() as u32).to_le_bytes());
    out.extend_from_slice(&header_bytes);
    out.extend_from_slice(&values);
    Ok(out)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < 16 || &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(Error::Corrupt("bad checkpoint magic or truncated header".into()));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != CHECKPOINT_VERSION {
        return Err(Error::VersionMismatch {
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let header_len = u32::from_le_bytes(bytes[12..16].try_into().expect("4 bytes")) as usize;
    let body = &bytes[16..];
    if body.len() < header_len {
        return Err(Error::Corrupt("truncated checkpoint header".into()));
    }
    let header: Header = serde_json::from_slice(&body[..header_len])
        .map_err(|e| Error::Corrupt(format!("checkpoint header: {e}")))?;
    if header.format_version != version {
        return Err(Error::Corrupt("header version disagrees with preamble".into()));
    }
    let values_bytes = &body[header_len..];
    let total: usize = header.segments.iter().map(|s| s.len).sum();
    let width = header.config.precision.width();
    if values_bytes.len() != total * width {
        return Err(Error::Corrupt(format!(
            "expected {} value bytes, found {}",
            total * width,
            values_bytes.len()
        )));
    }
    if digest(&header, values_bytes)? != header.content_digest {
        return Err(Error::DigestMismatch);
    }
    let values: Vec<f64> = match header.config.precision {
        Precision::F32 => values_bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
            .collect(),
        Precision::F64 => values_bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect(),
    };
    let params = ParameterVector::new(values, Arc::new(header.segments))?;
    Ok(Checkpoint {
        config: header.config,
        params,
    })
}

pub fn checkpoint_save(path: &Path, config: &ModelConfig, params: &ParameterVector) -> Result<()> {
    write_atomic(path, &encode_checkpoint(config, params)?)
}

pub fn checkpoint_load(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}
