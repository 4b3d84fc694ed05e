//! Books, chunking, and the per-step split datasets.

pub mod tokenizer;

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{derive_seed, seeded};
pub use tokenizer::{detokenize, tokenize, ByteTokenizer, TokenSequence, Tokenizer, BOS, BYTE_VOCAB_SIZE, EOS, PAD, SEP};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DocumentRole {
    ForgetCandidate,
    Retain,
    Auxiliary,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub title: String,
    pub text: String,
    pub role: DocumentRole,
}

impl Document {
    /// Builds a document from in-memory text, applying the same normalization as
    /// [`ingest_document`].
    pub fn from_text(id: impl Into<String>, text: &str, role: DocumentRole) -> Result<Self> {
        let id = id.into();
        let text = normalize(text);
        if text.is_empty() {
            return Err(Error::EmptyDocument(id));
        }
        Ok(Self {
            title: id.clone(),
            id,
            text,
            role,
        })
    }
}

fn normalize(text: &str) -> String {
    let text = text.strip_prefix('\u{feff}').unwrap_or(text);
    text.replace("\r\n", "\n").replace('\r', "\n").trim().to_string()
}

/// Reads one book from disk. The id is the file stem.
pub fn ingest_document(path: &Path, role: DocumentRole) -> Result<Document> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let raw = String::from_utf8(bytes).map_err(|_| Error::InvalidUtf8 {
        path: path.to_path_buf(),
    })?;
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string());
    let mut doc = Document::from_text(id, &raw, role)?;
    doc.title = path
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| doc.id.clone());
    Ok(doc)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChunkConfig {
    pub chunk_len: usize,
    pub prompt_len: usize,
}

impl ChunkConfig {
    /// 64-token chunks split 32/32.
    pub const DESK: ChunkConfig = ChunkConfig {
        chunk_len: 64,
        prompt_len: 32,
    };
    /// 200-token chunks split 100/100.
    pub const FULL: ChunkConfig = ChunkConfig {
        chunk_len: 200,
        prompt_len: 100,
    };

    pub fn validate(&self) -> Result<()> {
        if self.prompt_len == 0 || self.prompt_len >= self.chunk_len {
            return Err(Error::InvalidChunkConfig {
                chunk_len: self.chunk_len,
                prompt_len: self.prompt_len,
            });
        }
        Ok(())
    }

    pub fn continuation_len(&self) -> usize {
        self.chunk_len - self.prompt_len
    }
}

impl Default for ChunkConfig {
    fn default() -> Self {
        Self::DESK
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ChunkPair {
    pub book_id: String,
    pub chunk_index: usize,
    pub prompt: TokenSequence,
    pub continuation: TokenSequence,
}

impl ChunkPair {
    pub fn key(&self) -> (&str, usize) {
        (&self.book_id, self.chunk_index)
    }

    pub fn full_tokens(&self) -> Vec<u32> {
        let mut v = self.prompt.tokens.clone();
        v.extend_from_slice(&self.continuation.tokens);
        v
    }
}

pub fn chunk_document(doc: &Document, cfg: ChunkConfig) -> Result<Vec<ChunkPair>> {
    chunk_with(&ByteTokenizer::default(), doc, cfg)
}

pub fn chunk_with(tok: &dyn Tokenizer, doc: &Document, cfg: ChunkConfig) -> Result<Vec<ChunkPair>> {
    cfg.validate()?;
    let seq = tok.encode(&doc.text);
    chunk_tokens(&doc.id, &seq, cfg)
}

pub fn chunk_tokens(book_id: &str, seq: &TokenSequence, cfg: ChunkConfig) -> Result<Vec<ChunkPair>> {
    cfg.validate()?;
    if seq.len() < cfg.chunk_len {
        return Err(Error::DocumentTooShort {
            id: book_id.to_string(),
            tokens: seq.len(),
            chunk_len: cfg.chunk_len,
        });
    }
    Ok(seq
        .tokens
        .chunks_exact(cfg.chunk_len)
        .enumerate()
        .map(|(i, c)| ChunkPair {
            book_id: book_id.to_string(),
            chunk_index: i,
            prompt: TokenSequence::new(c[..cfg.prompt_len].to_vec(), seq.tokenizer_id.clone()),
            continuation: TokenSequence::new(
                c[cfg.prompt_len..].to_vec(),
                seq.tokenizer_id.clone(),
            ),
        })
        .collect())
}

/// Seeded uniform sample without replacement; keeps pool order.
pub fn sample_chunks(pool: &[ChunkPair], n: usize, seed: u64) -> Vec<ChunkPair> {
    if n >= pool.len() {
        return pool.to_vec();
    }
    let mut rng = seeded(seed);
    let mut idx = index::sample(&mut rng, pool.len(), n).into_vec();
    idx.sort_unstable();
    idx.into_iter().map(|i| pool[i].clone()).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitDataset {
    /// `forget_per_step[t-1]` is D_f^t.
    pub forget_per_step: Vec<Vec<ChunkPair>>,
    /// `previous_per_step[t-1]` is D_prev at step t; empty at t = 1.
    pub previous_per_step: Vec<Vec<ChunkPair>>,
    pub retain_eval: Vec<ChunkPair>,
    pub auxiliary_retain: Vec<ChunkPair>,
}

impl SplitDataset {
    pub fn steps(&self) -> usize {
        self.forget_per_step.len()
    }

    /// D_f^t for 1-based `t`.
    pub fn forget(&self, t: usize) -> &[ChunkPair] {
        &self.forget_per_step[t - 1]
    }

    pub fn previous(&self, t: usize) -> &[ChunkPair] {
        &self.previous_per_step[t - 1]
    }

    pub fn all_forget(&self) -> Vec<ChunkPair> {
        self.forget_per_step.iter().flatten().cloned().collect()
    }
}

/// Assembles D_f^t, D_prev, D_nor and D_add. Forget books are requested in the
/// order given, one per time step.
pub fn build_schedule(
    books: &[Document],
    retain_books: &[Document],
    auxiliary_books: &[Document],
    cfg: ChunkConfig,
    samples_per_split: usize,
    seed: u64,
) -> Result<SplitDataset> {
    if books.is_empty() {
        return Err(Error::Empty("forget book list"));
    }
    if samples_per_split < 1 {
        return Err(Error::InvalidArgument("samples_per_split must be >= 1".into()));
    }
    let mut seen = HashSet::new();
    for d in books {
        if !seen.insert(d.id.as_str()) {
            return Err(Error::IdCollision(d.id.clone()));
        }
    }
    for d in retain_books.iter().chain(auxiliary_books) {
        if !seen.insert(d.id.as_str()) {
            return Err(Error::IdCollision(d.id.clone()));
        }
    }

    let forget_per_step = books
        .iter()
        .map(|d| chunk_document(d, cfg))
        .collect::<Result<Vec<_>>>()?;

    let mut previous_per_step = Vec::with_capacity(books.len());
    let mut pool: Vec<ChunkPair> = Vec::new();
    for (i, step_chunks) in forget_per_step.iter().enumerate() {
        let t = i as u64 + 1;
        previous_per_step.push(sample_chunks(
            &pool,
            samples_per_split,
            derive_seed(seed, "previous", t),
        ));
        pool.extend(step_chunks.iter().cloned());
    }

    let mut retain_pool = Vec::new();
    for d in retain_books {
        retain_pool.extend(chunk_document(d, cfg)?);
    }
    let retain_eval = sample_chunks(&retain_pool, samples_per_split, derive_seed(seed, "retain", 0));

    let mut auxiliary_retain = Vec::new();
    for d in auxiliary_books {
        auxiliary_retain.extend(chunk_document(d, cfg)?);
    }

    Ok(SplitDataset {
        forget_per_step,
        previous_per_step,
        retain_eval,
        auxiliary_retain,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChunkRecord {
    pub book_id: String,
    pub chunk_index: usize,
    pub prompt_token_ids: Vec<u32>,
    pub continuation_token_ids: Vec<u32>,
}

impl From<&ChunkPair> for ChunkRecord {
    fn from(c: &ChunkPair) -> Self {
        Self {
            book_id: c.book_id.clone(),
            chunk_index: c.chunk_index,
            prompt_token_ids: c.prompt.tokens.clone(),
            continuation_token_ids: c.continuation.tokens.clone(),
        }
    }
}

pub fn write_chunks_json(path: &Path, chunks: &[ChunkPair]) -> Result<()> {
    let records: Vec<ChunkRecord> = chunks.iter().map(ChunkRecord::from).collect();
    let body = serde_json::to_string_pretty(&records)?;
    fs::write(path, body).map_err(|e| Error::io(path, e))
}

pub fn read_chunks_json(path: &Path, tokenizer_id: &str) -> Result<Vec<ChunkPair>> {
    let body = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let records: Vec<ChunkRecord> = serde_json::from_str(&body)?;
    Ok(records
        .into_iter()
        .map(|r| ChunkPair {
            book_id: r.book_id,
            chunk_index: r.chunk_index,
            prompt: TokenSequence::new(r.prompt_token_ids, tokenizer_id),
            continuation: TokenSequence::new(r.continuation_token_ids, tokenizer_id),
        })
        .collect())
}
