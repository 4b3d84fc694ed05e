#![allow(dead_code)]

use std::path::{Path, PathBuf};

use rand::Rng;
use takedown_core::rng::seeded;

const CONSONANTS: &str = "bcdfghjklmnpqrstvwxzBCDFGHJKLMNPQRSTVWXZ";
const VOWELS: &str = "aeiouyAEIOUY";

/// The letters reserved for book `index` out of `books`: consonants, then vowels.
pub fn alphabet(index: usize, books: usize) -> (Vec<char>, Vec<char>) {
    let pick = |s: &str| s.chars().skip(index).step_by(books).collect();
    (pick(CONSONANTS), pick(VOWELS))
}

/// A lexicon of distinct pseudo-words built from seeded syllables.
pub fn lexicon((onsets, vowels): &(Vec<char>, Vec<char>), size: usize, seed: u64) -> Vec<String> {
    let mut rng = seeded(seed);
    let mut seen = std::collections::BTreeSet::new();
    let mut out = Vec::with_capacity(size);
    while out.len() < size {
        let syllables = rng.random_range(1..=3);
        let w: String = (0..syllables)
            .map(|_| {
                format!(
                    "{}{}",
                    onsets[rng.random_range(0..onsets.len())],
                    vowels[rng.random_range(0..vowels.len())]
                )
            })
            .collect();
        if seen.insert(w.clone()) {
            out.push(w);
        }
    }
    out
}

/// Random prose of at least `bytes` bytes drawn from `lexicon`.
pub fn book_text(lexicon: &[String], bytes: usize, seed: u64) -> String {
    let mut rng = seeded(seed);
    let mut s = String::new();
    while s.len() < bytes {
        if !s.is_empty() {
            s.push(' ');
        }
        s.push_str(&lexicon[rng.random_range(0..lexicon.len())]);
    }
    s
}

pub struct SyntheticCorpus {
    pub forget: Vec<PathBuf>,
    pub retain: Vec<PathBuf>,
    pub auxiliary: Vec<PathBuf>,
}

/// Writes `n_forget` forget books, `n_retain` retain books and `n_aux`
/// auxiliary books of `bytes` bytes each under `dir/books`. Every book has
/// its own alphabet.
pub fn write_corpus(dir: &Path, n_forget: usize, n_retain: usize, n_aux: usize, bytes: usize, seed: u64) -> SyntheticCorpus {
    let books = dir.join("books");
    std::fs::create_dir_all(&books).unwrap();
    let total = n_forget + n_retain + n_aux;
    let mut idx = 0u64;
    let mut write = |prefix: &str, n: usize| -> Vec<PathBuf> {
        (0..n)
            .map(|i| {
                let book_seed = seed.wrapping_mul(1000) + idx;
                let lex = lexicon(&alphabet(idx as usize, total), 200, book_seed);
                idx += 1;
                let p = books.join(format!("{prefix}{}.txt", i + 1));
                std::fs::write(&p, book_text(&lex, bytes, book_seed)).unwrap();
                PathBuf::from("books").join(p.file_name().unwrap())
            })
            .collect()
    };
    SyntheticCorpus {
        forget: write("forget", n_forget),
        retain: write("retain", n_retain),
        auxiliary: write("aux", n_aux),
    }
}

pub fn paths_json(p: &[PathBuf]) -> String {
    serde_json::to_string(&p.iter().map(|x| x.to_string_lossy().into_owned()).collect::<Vec<_>>()).unwrap()
}
