//! Bloom filter over fixed-length token n-grams.

use std::path::Path;

use sha2::{Digest, Sha256};

use crate::corpus::ChunkPair;
use crate::error::{Error, Result};
use crate::fsutil::write_atomic;

pub const FILTER_MAGIC: &[u8; 8] = b"TKDNBLOM";
pub const FILTER_VERSION: u32 = 1;
pub const DEFAULT_NGRAM_N: usize = 6;
pub const DEFAULT_FP_RATE: f64 = 1e-3;

/// Optimal `(m, k)` for `n_items` insertions at false-positive rate `p`.
pub fn bloom_size(n_items: usize, p: f64) -> Result<(u64, u32)> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::InvalidArgument(format!("false-positive rate {p} not in (0, 1)")));
    }
    let n = n_items.max(1) as f64;
    let ln2 = std::f64::consts::LN_2;
    let m = (-n * p.ln() / (ln2 * ln2)).ceil().max(1.0);
    let k = ((m / n) * ln2).round().max(1.0);
    Ok((m as u64, k as u32))
}

fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn fold(seed: u64, gram: &[u32]) -> u64 {
    let mut h = mix64(seed ^ gram.len() as u64);
    for &t in gram {
        h = mix64(h ^ (t as u64).wrapping_add(0x9e37_79b9_7f4a_7c15));
    }
    h
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NGramFilter {
    ngram_n: usize,
    k: u32,
    m: u64,
    items: u64,
    words: Vec<u64>,
}

impl NGramFilter {
    pub fn new(ngram_n: usize, m: u64, k: u32) -> Result<Self> {
        if ngram_n < 2 {
            return Err(Error::InvalidArgument("ngram_n must be >= 2".into()));
        }
        if m < 1 || k < 1 {
            return Err(Error::InvalidArgument("bloom m and k must be >= 1".into()));
        }
        Ok(Self {
            ngram_n,
            k,
            m,
            items: 0,
            words: vec![0; m.div_ceil(64) as usize],
        })
    }

    pub fn with_capacity(ngram_n: usize, expected_items: usize, fp_rate: f64) -> Result<Self> {
        let (m, k) = bloom_size(expected_items, fp_rate)?;
        Self::new(ngram_n, m, k)
    }

    /// A filter with every bit set; every query reports present.
    pub fn saturated(ngram_n: usize, m: u64, k: u32) -> Result<Self> {
        let mut f = Self::new(ngram_n, m, k)?;
        f.words.iter_mut().for_each(|w| *w = u64::MAX);
        Ok(f)
    }

    pub fn ngram_n(&self) -> usize {
        self.ngram_n
    }

    pub fn num_bits(&self) -> u64 {
        self.m
    }

    pub fn num_hashes(&self) -> u32 {
        self.k
    }

    pub fn items_inserted(&self) -> u64 {
        self.items
    }

    fn positions(&self, gram: &[u32]) -> impl Iterator<Item = u64> + '_ {
        let h1 = fold(0x5851_f42d_4c95_7f2d, gram);
        let h2 = fold(0x1405_7b7e_f767_814f, gram) | 1;
        (0..self.k as u64).map(move |i| h1.wrapping_add(i.wrapping_mul(h2)) % self.m)
    }

    fn check_len(&self, gram: &[u32]) -> Result<()> {
        if gram.len() != self.ngram_n {
            return Err(Error::LengthMismatch {
                expected: self.ngram_n,
                got: gram.len(),
            });
        }
        Ok(())
    }

    pub fn insert(&mut self, gram: &[u32]) -> Result<()> {
        self.check_len(gram)?;
        let pos: Vec<u64> = self.positions(gram).collect();
        for p in pos {
            self.words[(p / 64) as usize] |= 1 << (p % 64);
        }
        self.items += 1;
        Ok(())
    }

    pub fn contains(&self, gram: &[u32]) -> Result<bool> {
        self.check_len(gram)?;
        Ok(self.positions(gram).all(|p| self.words[(p / 64) as usize] & (1 << (p % 64)) != 0))
    }

    /// Inserts every sliding window of `tokens`; returns how many.
    pub fn insert_sequence(&mut self, tokens: &[u32]) -> usize {
        let mut n = 0;
        for w in tokens.windows(self.ngram_n) {
            self.insert(w).expect("window length equals ngram_n");
            n += 1;
        }
        n
    }

    /// Inserts every window of each chunk's prompt followed by its continuation.
    pub fn insert_chunks(&mut self, chunks: &[ChunkPair]) {
        for c in chunks {
            self.insert_sequence(&c.full_tokens());
        }
    }

    /// Sized for and filled with the n-grams of `chunks`.
    pub fn from_chunks(chunks: &[ChunkPair], ngram_n: usize, fp_rate: f64) -> Result<Self> {
        let expected = chunks
            .iter()
            .map(|c| c.full_tokens().len().saturating_sub(ngram_n - 1))
            .sum::<usize>();
        let mut f = Self::with_capacity(ngram_n, expected, fp_rate)?;
        f.insert_chunks(chunks);
        Ok(f)
    }

    /// Windows of `tokens` that the filter reports present, by start index.
    pub fn hits(&self, tokens: &[u32]) -> Vec<usize> {
        tokens
            .windows(self.ngram_n)
            .enumerate()
            .filter(|(_, w)| self.contains(w).unwrap_or(false))
            .map(|(i, _)| i)
            .collect()
    }

    fn word_bytes(&self) -> Vec<u8> {
        self.words.iter().flat_map(|w| w.to_le_bytes()).collect()
    }

    pub fn encode(&self) -> Vec<u8> {
        let body = self.word_bytes();
        let mut out = Vec::with_capacity(64 + body.len());
        out.extend_from_slice(FILTER_MAGIC);
        out.extend_from_slice(&FILTER_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.ngram_n as u32).to_le_bytes());
        out.extend_from_slice(&self.k.to_le_bytes());
        out.extend_from_slice(&self.m.to_le_bytes());
        out.extend_from_slice(&self.items.to_le_bytes());
        out.extend_from_slice(&Sha256::digest(&body));
        out.extend_from_slice(&body);
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        const HEADER: usize = 8 + 4 + 4 + 4 + 8 + 8 + 32;
        if bytes.len() < 12 || &bytes[..8] != FILTER_MAGIC {
            return Err(Error::Corrupt("not an n-gram filter file".into()));
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
        let version = u32_at(8);
        if version != FILTER_VERSION {
            return Err(Error::VersionMismatch {
                found: version,
                expected: FILTER_VERSION,
            });
        }
        if bytes.len() < HEADER {
            return Err(Error::Corrupt("truncated filter header".into()));
        }
        let u64_at = |o: usize| u64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
        let ngram_n = u32_at(12) as usize;
        let k = u32_at(16);
        let m = u64_at(20);
        let items = u64_at(28);
        let digest = &bytes[36..68];
        let body = &bytes[HEADER..];
        let mut f = Self::new(ngram_n, m, k).map_err(|e| Error::Corrupt(e.to_string()))?;
        if body.len() != f.words.len() * 8 {
            return Err(Error::Corrupt(format!(
                "filter body has {} bytes, expected {}",
                body.len(),
                f.words.len() * 8
            )));
        }
        if Sha256::digest(body).as_slice() != digest {
            return Err(Error::DigestMismatch);
        }
        for (w, c) in f.words.iter_mut().zip(body.chunks_exact(8)) {
            *w = u64::from_le_bytes(c.try_into().unwrap());
        }
        f.items = items;
        Ok(f)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.encode())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes)
    }
}
