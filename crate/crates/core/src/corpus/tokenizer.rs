//! Byte-level tokenizer.
//!
//! Ids `0..=255` are raw bytes; four specials follow. Every UTF-8 string
//! round-trips because every byte has an id.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const PAD: u32 = 256;
pub const BOS: u32 = 257;
pub const EOS: u32 = 258;
pub const SEP: u32 = 259;
pub const BYTE_VOCAB_SIZE: usize = 260;

/// Token ids tagged with the tokenizer that produced them.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TokenSequence {
    pub tokens: Vec<u32>,
    pub tokenizer_id: String,
}

impl TokenSequence {
    pub fn new(tokens: Vec<u32>, tokenizer_id: impl Into<String>) -> Self {
        Self {
            tokens,
            tokenizer_id: tokenizer_id.into(),
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn as_slice(&self) -> &[u32] {
        &self.tokens
    }
}

pub trait Tokenizer: Send + Sync {
    fn id(&self) -> &str;
    fn vocab_size(&self) -> usize;
    fn encode(&self, text: &str) -> TokenSequence;
    /// Inverse of `encode`. Special tokens are dropped; byte runs that are
    /// not valid UTF-8 are replaced lossily.
    fn decode(&self, tokens: &[u32]) -> String;
}

#[derive(Debug, Clone)]
pub struct ByteTokenizer {
    id: String,
}

impl Default for ByteTokenizer {
    fn default() -> Self {
        let digest = Sha256::digest(format!("byte-level/v1/{BYTE_VOCAB_SIZE}").as_bytes());
        Self {
            id: format!("byte-v1-{}", &hex::encode(digest)[..12]),
        }
    }
}

impl ByteTokenizer {
    pub fn new() -> Self {
        Self::default()
    }
}

impl Tokenizer for ByteTokenizer {
    fn id(&self) -> &str {
        &self.id
    }

    fn vocab_size(&self) -> usize {
        BYTE_VOCAB_SIZE
    }

    fn encode(&self, text: &str) -> TokenSequence {
        TokenSequence::new(text.bytes().map(u32::from).collect(), self.id.clone())
    }

    fn decode(&self, tokens: &[u32]) -> String {
        let bytes: Vec<u8> = tokens
            .iter()
            .filter(|&&t| t < 256)
            .map(|&t| t as u8)
            .collect();
        match String::from_utf8(bytes) {
            Ok(s) => s,
            Err(e) => String::from_utf8_lossy(e.as_bytes()).into_owned(),
        }
    }
}

pub fn tokenize(text: &str) -> TokenSequence {
    ByteTokenizer::default().encode(text)
}

pub fn detokenize(tokens: &[u32]) -> String {
    ByteTokenizer::default().decode(tokens)
}
