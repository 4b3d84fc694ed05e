//! Temperature plus nucleus sampling, prompt-prefix baselines and
//! n-gram-guarded (MemFree) decoding.

pub mod bloom;
pub mod preset;

pub use bloom::{bloom_size, NGramFilter, DEFAULT_FP_RATE, DEFAULT_NGRAM_N};
pub use preset::PromptPreset;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::corpus::{TokenSequence, EOS};
use crate::error::{Error, Result};
use crate::model::LanguageModel;
use crate::rng::{seeded, Rng};

fn default_temperature() -> f64 {
    0.4
}
fn default_top_p() -> f64 {
    0.6
}
fn default_max_new() -> usize {
    32
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerConfig {
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default = "default_top_p")]
    pub top_p: f64,
    #[serde(default = "default_max_new")]
    pub max_new_tokens: usize,
    #[serde(default)]
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            temperature: default_temperature(),
            top_p: default_top_p(),
            max_new_tokens: default_max_new(),
            seed: 0,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0) || !self.temperature.is_finite() {
            return Err(Error::config("sampler.temperature", "must be > 0"));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(Error::config("sampler.top_p", "must be in (0, 1]"));
        }
        if self.max_new_tokens < 1 {
            return Err(Error::config("sampler.max_new_tokens", "must be >= 1"));
        }
        Ok(())
    }
}

/// Tokens ordered by tempered probability, descending, ties by lower id.
pub fn ranked_tokens(logits: &[f64], temperature: f64) -> Vec<(u32, f64)> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| ((l - max) / temperature).exp()).collect();
    let z: f64 = exps.iter().sum();
    let mut ranked: Vec<(u32, f64)> = exps.iter().enumerate().map(|(i, e)| (i as u32, e / z)).collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    ranked
}

/// Length of the smallest ranked prefix with mass ≥ `top_p`.
pub fn nucleus_len(ranked: &[(u32, f64)], top_p: f64) -> usize {
    let mut cum = 0.0;
    for (i, (_, p)) in ranked.iter().enumerate() {
        cum += p;
        if cum >= top_p - 1e-12 {
            return i + 1;
        }
    }
    ranked.len()
}

/// The kept set with renormalized probabilities.
pub fn nucleus_candidates(logits: &[f64], temperature: f64, top_p: f64) -> Vec<(u32, f64)> {
    let mut ranked = ranked_tokens(logits, temperature);
    ranked.truncate(nucleus_len(&ranked, top_p));
    let mass: f64 = ranked.iter().map(|(_, p)| p).sum();
    ranked.iter_mut().for_each(|(_, p)| *p /= mass);
    ranked
}

fn pick(candidates: &[(u32, f64)], u: f64) -> u32 {
    let mut cum = 0.0;
    for &(t, p) in candidates {
        cum += p;
        if u < cum {
            return t;
        }
    }
    candidates.last().expect("non-empty candidate set").0
}

/// Draws one token with a single uniform from `rng`.
pub fn nucleus_next(logits: &[f64], cfg: &SamplerConfig, rng: &mut Rng) -> u32 {
    let u: f64 = rng.random();
    pick(&nucleus_candidates(logits, cfg.temperature, cfg.top_p), u)
}

pub fn argmax(logits: &[f64]) -> u32 {
    let mut best = 0;
    for (i, &l) in logits.iter().enumerate() {
        if l > logits[best] {
            best = i;
        }
    }
    best as u32
}

/// The last `context_len` tokens.
fn window(tokens: &[u32], context_len: usize) -> &[u32] {
    &tokens[tokens.len().saturating_sub(context_len)..]
}

fn assemble(model: &LanguageModel, prompt: &[u32], preset: Option<PromptPreset>) -> Result<Vec<u32>> {
    if prompt.is_empty() {
        return Err(Error::Empty("prompt"));
    }
    let mut input = preset.map(PromptPreset::tokens).unwrap_or_default();
    input.extend_from_slice(prompt);
    let ctx = model.config().context_len;
    if input.len() >= ctx {
        return Err(Error::SequenceTooLong {
            len: input.len(),
            context_len: ctx,
        });
    }
    Ok(input)
}

fn tokenizer_tag(model: &LanguageModel) -> String {
    format!("model-vocab-{}", model.config().vocab_size)
}

/// Chooses the next token from logits, the tokens so far and one uniform draw;
/// `None` ends generation.
trait Chooser {
    fn choose(&self, logits: &[f64], history: &[u32], u: f64) -> Option<u32>;
}

fn run_decoder(
    model: &LanguageModel,
    prompt: &[u32],
    preset: Option<PromptPreset>,
    max_new_tokens: usize,
    seed: u64,
    chooser: &dyn Chooser,
) -> Result<TokenSequence> {
    let mut input = assemble(model, prompt, preset)?;
    let prefix_len = input.len() - prompt.len();
    let ctx = model.config().context_len;
    let mut rng = seeded(seed);
    let mut out = Vec::with_capacity(max_new_tokens);
    for _ in 0..max_new_tokens {
        let logits = model.next_token_logits(window(&input, ctx))?;
        let u: f64 = rng.random();
        let Some(tok) = chooser.choose(&logits, &input[prefix_len..], u) else {
            break;
        };
        if tok == EOS {
            break;
        }
        out.push(tok);
        input.push(tok);
    }
    Ok(TokenSequence::new(out, tokenizer_tag(model)))
}

struct Nucleus<'a>(&'a SamplerConfig);

impl Chooser for Nucleus<'_> {
    fn choose(&self, logits: &[f64], _history: &[u32], u: f64) -> Option<u32> {
        Some(pick(&nucleus_candidates(logits, self.0.temperature, self.0.top_p), u))
    }
}

struct Greedy;

impl Chooser for Greedy {
    fn choose(&self, logits: &[f64], _history: &[u32], _u: f64) -> Option<u32> {
        Some(argmax(logits))
    }
}

struct Guarded<'a> {
    cfg: &'a SamplerConfig,
    filter: &'a NGramFilter,
}

impl Guarded<'_> {
    fn blocked(&self, history: &[u32], candidate: u32) -> bool {
        let n = self.filter.ngram_n();
        if history.len() + 1 < n {
            return false;
        }
        let mut gram = history[history.len() + 1 - n..].to_vec();
        gram.push(candidate);
        self.filter.contains(&gram).expect("gram has filter length")
    }
}

impl Chooser for Guarded<'_> {
    /// The nucleus sample if clear, otherwise the remaining tokens in descending
    /// probability; `None` when every token is blocked.
    fn choose(&self, logits: &[f64], history: &[u32], u: f64) -> Option<u32> {
        let ranked = ranked_tokens(logits, self.cfg.temperature);
        let keep = nucleus_len(&ranked, self.cfg.top_p);
        let mass: f64 = ranked[..keep].iter().map(|(_, p)| p).sum();
        let nucleus: Vec<(u32, f64)> = ranked[..keep].iter().map(|&(t, p)| (t, p / mass)).collect();
        let first = pick(&nucleus, u);
        if !self.blocked(history, first) {
            return Some(first);
        }
        ranked
            .iter()
            .map(|&(t, _)| t)
            .filter(|&t| t != first)
            .find(|&t| !self.blocked(history, t))
    }
}

/// Samples up to `max_new_tokens` after the optional preset and `prompt`. The
/// returned tokens exclude the preset, the prompt and the stopping EOS.
pub fn generate(
    model: &LanguageModel,
    prompt: &[u32],
    cfg: &SamplerConfig,
    preset: Option<PromptPreset>,
) -> Result<TokenSequence> {
    cfg.validate()?;
    run_decoder(model, prompt, preset, cfg.max_new_tokens, cfg.seed, &Nucleus(cfg))
}

/// Argmax decoding.
pub fn greedy_generate(model: &LanguageModel, prompt: &[u32], max_new_tokens: usize) -> Result<TokenSequence> {
    run_decoder(model, prompt, None, max_new_tokens, 0, &Greedy)
}

/// Like [`generate`], but no emitted token may complete an n-gram that the
/// filter reports present. The window covers the prompt and emitted tokens.
pub fn memfree_generate(
    model: &LanguageModel,
    prompt: &[u32],
    cfg: &SamplerConfig,
    preset: Option<PromptPreset>,
    filter: &NGramFilter,
) -> Result<TokenSequence> {
    cfg.validate()?;
    run_decoder(
        model,
        prompt,
        preset,
        cfg.max_new_tokens,
        cfg.seed,
        &Guarded { cfg, filter },
    )
}
