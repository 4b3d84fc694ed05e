//! Rouge scoring, split evaluation, perplexity and trade-off summaries.

use std::collections::HashMap;
use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{detokenize, ChunkPair};
use crate::decode::{generate, memfree_generate, NGramFilter, PromptPreset, SamplerConfig};
use crate::error::{Error, Result};
use crate::fsutil::write_atomic;
use crate::model::{sequence_nll, LanguageModel};
use crate::rng::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct RougeScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl RougeScore {
    fn from_overlap(overlap: usize, hyp_len: usize, ref_len: usize) -> Self {
        if hyp_len == 0 || ref_len == 0 {
            return Self::default();
        }
        let precision = overlap as f64 / hyp_len as f64;
        let recall = overlap as f64 / ref_len as f64;
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Self { precision, recall, f1 }
    }
}

/// Lowercased alphanumeric runs.
pub fn scoring_words(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect()
}

pub fn rouge1_words(hyp: &[String], reference: &[String]) -> RougeScore {
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for w in reference {
        *counts.entry(w.as_str()).or_default() += 1;
    }
    let mut overlap = 0;
    for w in hyp {
        if let Some(c) = counts.get_mut(w.as_str()) {
            if *c > 0 {
                *c -= 1;
                overlap += 1;
            }
        }
    }
    RougeScore::from_overlap(overlap, hyp.len(), reference.len())
}

pub fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { prev[j + 1].max(cur[j]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

pub fn rouge_l_words(hyp: &[String], reference: &[String]) -> RougeScore {
    RougeScore::from_overlap(lcs_len(hyp, reference), hyp.len(), reference.len())
}

pub fn rouge1(hypothesis: &str, reference: &str) -> RougeScore {
    rouge1_words(&scoring_words(hypothesis), &scoring_words(reference))
}

pub fn rouge_l(hypothesis: &str, reference: &str) -> RougeScore {
    rouge_l_words(&scoring_words(hypothesis), &scoring_words(reference))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitScore {
    pub rouge1: f64,
    pub rouge_l: f64,
    pub n_chunks: usize,
}

impl SplitScore {
    pub fn mean(&self) -> f64 {
        (self.rouge1 + self.rouge_l) / 2.0
    }
}

/// How continuations are produced during evaluation.
#[derive(Clone, Copy)]
pub struct EvalSetup<'a> {
    pub sampler: &'a SamplerConfig,
    pub preset: Option<PromptPreset>,
    pub guard: Option<&'a NGramFilter>,
}

/// Means of per-chunk F1 after generating from each prompt. Chunk `i` samples
/// with seed `derive_seed(sampler.seed, "eval", i)`.
pub fn eval_split(model: &LanguageModel, split: &[ChunkPair], setup: EvalSetup<'_>) -> Result<SplitScore> {
    eval_split_with(split, |i, c| {
        let cfg = SamplerConfig {
            seed: derive_seed(setup.sampler.seed, "eval", i as u64),
            max_new_tokens: setup.sampler.max_new_tokens.min(c.continuation.len()).max(1),
            ..*setup.sampler
        };
        let out = match setup.guard {
            Some(f) => memfree_generate(model, c.prompt.as_slice(), &cfg, setup.preset, f)?,
            None => generate(model, c.prompt.as_slice(), &cfg, setup.preset)?,
        };
        Ok(detokenize(out.as_slice()))
    })
}

/// Scores `continuation(i, chunk)` against each chunk's reference continuation.
pub fn eval_split_with<F>(split: &[ChunkPair], mut continuation: F) -> Result<SplitScore>
where
    F: FnMut(usize, &ChunkPair) -> Result<String>,
{
    if split.is_empty() {
        return Err(Error::Empty("evaluation split"));
    }
    let (mut r1, mut rl) = (0.0, 0.0);
    for (i, c) in split.iter().enumerate() {
        let hyp = scoring_words(&continuation(i, c)?);
        let reference = scoring_words(&detokenize(c.continuation.as_slice()));
        r1 += rouge1_words(&hyp, &reference).f1;
        rl += rouge_l_words(&hyp, &reference).f1;
    }
    let n = split.len() as f64;
    Ok(SplitScore {
        rouge1: r1 / n,
        rouge_l: rl / n,
        n_chunks: split.len(),
    })
}

/// `exp(Σ NLL / Σ tokens)` over continuations.
pub fn perplexity(model: &LanguageModel, split: &[ChunkPair]) -> Result<f64> {
    if split.is_empty() {
        return Err(Error::Empty("perplexity split"));
    }
    let mut nll = 0.0;
    let mut tokens = 0;
    for c in split {
        nll += sequence_nll(model, c.prompt.as_slice(), c.continuation.as_slice())?;
        tokens += c.continuation.len();
    }
    if tokens == 0 {
        return Err(Error::Empty("continuation tokens"));
    }
    Ok((nll / tokens as f64).exp())
}

/// `−½(R₁ + R_L)` for a split.
pub fn utility(score: &SplitScore) -> f64 {
    -0.5 * (score.rouge1 + score.rouge_l)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tradeoff {
    pub efficacy: f64,
    pub ability_proxy: f64,
}

/// Efficacy sums the forget and previous-forget utilities (the latter zero when
/// absent). The ability proxy is the perplexity ratio clamped to `[0, 1]`.
pub fn tradeoff_report(
    forget: &SplitScore,
    previous: Option<&SplitScore>,
    retain_perplexity: f64,
    vanilla_retain_perplexity: f64,
) -> Result<Tradeoff> {
    if !(retain_perplexity > 0.0) || !(vanilla_retain_perplexity > 0.0) {
        return Err(Error::InvalidArgument("perplexities must be positive".into()));
    }
    Ok(Tradeoff {
        efficacy: utility(forget) + previous.map(utility).unwrap_or(0.0),
        ability_proxy: (vanilla_retain_perplexity / retain_perplexity).clamp(0.0, 1.0),
    })
}

/// Everything measured after one time step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub t: usize,
    pub algorithm: String,
    /// Split label (e.g. `forget`, `previous`, `retain`, `forget+memfree`) to score.
    pub splits: Vec<(String, SplitScore)>,
    pub retain_perplexity: f64,
    pub efficacy: f64,
    pub ability_proxy: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub gamma: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub mask_fraction: Option<f64>,
}

impl MetricReport {
    pub fn split(&self, label: &str) -> Option<&SplitScore> {
        self.splits.iter().find(|(l, _)| l == label).map(|(_, s)| s)
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let mut bytes = serde_json::to_vec_pretty(self)?;
        bytes.push(b'\n');
        write_atomic(path, &bytes)
    }
}

pub const METRICS_CSV_HEADER: &str = "t,split,rouge1,rougeL,n_chunks";

fn csv_row(t: usize, label: &str, s: &SplitScore) -> String {
    format!("{t},{label},{:.6},{:.6},{}", s.rouge1, s.rouge_l, s.n_chunks)
}

/// Rewrites the whole CSV for `reports`.
pub fn write_metrics_csv(path: &Path, reports: &[MetricReport]) -> Result<()> {
    let mut out = Vec::new();
    writeln!(out, "{METRICS_CSV_HEADER}").unwrap();
    for r in reports {
        for (label, s) in &r.splits {
            writeln!(out, "{}", csv_row(r.t, label, s)).unwrap();
        }
    }
    write_atomic(path, &out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CsvRow {
    pub t: usize,
    pub split: String,
    pub score: SplitScore,
}

pub fn read_metrics_csv(path: &Path) -> Result<Vec<CsvRow>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    if lines.next() != Some(METRICS_CSV_HEADER) {
        return Err(Error::Corrupt(format!("{} lacks the metrics header", path.display())));
    }
    let bad = |l: &str| Error::Corrupt(format!("bad metrics row {l:?}"));
    lines
        .filter(|l| !l.is_empty())
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            if f.len() != 5 {
                return Err(bad(l));
            }
            Ok(CsvRow {
                t: f[0].parse().map_err(|_| bad(l))?,
                split: f[1].to_string(),
                score: SplitScore {
                    rouge1: f[2].parse().map_err(|_| bad(l))?,
                    rouge_l: f[3].parse().map_err(|_| bad(l))?,
                    n_chunks: f[4].parse().map_err(|_| bad(l))?,
                },
            })
        })
        .collect()
}
