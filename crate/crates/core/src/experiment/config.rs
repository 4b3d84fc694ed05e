use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{ChunkConfig, BYTE_VOCAB_SIZE};
use crate::decode::{PromptPreset, SamplerConfig, DEFAULT_FP_RATE, DEFAULT_NGRAM_N};
use crate::error::{Error, Result};
use crate::model::{ModelConfig, OptimizerKind};
use crate::unlearn::{Registry, UnlearnConfig};

pub const SCHEMA_JSON: &str = include_str!("../../resources/experiment.schema.json");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusPaths {
    /// One book per time step, in request order.
    pub forget_books: Vec<PathBuf>,
    #[serde(default)]
    pub retain_books: Vec<PathBuf>,
    #[serde(default)]
    pub auxiliary_books: Vec<PathBuf>,
}

fn d_mem_lr() -> f64 {
    3e-3
}
fn d_mem_epochs() -> usize {
    300
}
fn d_mem_batch() -> usize {
    4
}
fn d_target() -> f64 {
    0.8
}
fn d_eval_every() -> usize {
    10
}
fn d_adam() -> OptimizerKind {
    OptimizerKind::adam()
}

/// The vanilla phase: fit every book until greedy Rouge-L on the forget books
/// reaches `target_rouge_l` or `max_epochs` pass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MemorizeConfig {
    #[serde(default = "d_mem_lr")]
    pub lr: f64,
    #[serde(default = "d_mem_epochs")]
    pub max_epochs: usize,
    #[serde(default = "d_mem_batch")]
    pub batch_size: usize,
    #[serde(default = "d_target")]
    pub target_rouge_l: f64,
    #[serde(default = "d_eval_every")]
    pub eval_every: usize,
    #[serde(default = "d_adam")]
    pub optimizer: OptimizerKind,
    /// Reuse an existing vanilla checkpoint instead of training.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
}

impl Default for MemorizeConfig {
    fn default() -> Self {
        Self {
            lr: d_mem_lr(),
            max_epochs: d_mem_epochs(),
            batch_size: d_mem_batch(),
            target_rouge_l: d_target(),
            eval_every: d_eval_every(),
            optimizer: d_adam(),
            checkpoint: None,
        }
    }
}

fn d_ngram() -> usize {
    DEFAULT_NGRAM_N
}
fn d_fp() -> f64 {
    DEFAULT_FP_RATE
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MemFreeConfig {
    #[serde(default)]
    pub enabled: bool,
    #[serde(default = "d_ngram")]
    pub ngram_n: usize,
    #[serde(default = "d_fp")]
    pub fp_rate: f64,
}

impl Default for MemFreeConfig {
    fn default() -> Self {
        Self {
            enabled: false,
            ngram_n: d_ngram(),
            fp_rate: d_fp(),
        }
    }
}

fn d_samples() -> usize {
    8
}
fn d_output() -> PathBuf {
    PathBuf::from("run")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub corpus: CorpusPaths,
    #[serde(default)]
    pub chunking: ChunkConfig,
    /// Chunks sampled for D_prev and D_nor.
    #[serde(default = "d_samples")]
    pub samples_per_split: usize,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub memorize: MemorizeConfig,
    pub unlearn: UnlearnConfig,
    #[serde(default)]
    pub sampler: SamplerConfig,
    #[serde(default)]
    pub memfree: MemFreeConfig,
    /// Extra evaluations with these prefixes on D_f and D_prev.
    #[serde(default)]
    pub prompt_presets: Vec<PromptPreset>,
    /// Number of time steps; all forget books when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steps: Option<usize>,
    #[serde(default = "d_output")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::config(field_of(&e), e.to_string()))
    }

    /// Parses and validates a config file. Relative paths inside it are
    /// resolved against `base_dir`, which is returned alongside.
    pub fn load(path: &Path) -> Result<(Self, PathBuf)> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg = Self::from_json(&text)?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        cfg.validate(&base, &Registry::builtin())?;
        Ok((cfg, base))
    }

    pub fn steps(&self) -> usize {
        self.steps.unwrap_or(self.corpus.forget_books.len())
    }

    pub fn validate(&self, base_dir: &Path, registry: &Registry) -> Result<()> {
        if self.corpus.forget_books.is_empty() {
            return Err(Error::config("corpus.forget_books", "at least one book is required"));
        }
        let groups = [
            ("corpus.forget_books", &self.corpus.forget_books),
            ("corpus.retain_books", &self.corpus.retain_books),
            ("corpus.auxiliary_books", &self.corpus.auxiliary_books),
        ];
        for (field, paths) in groups {
            for p in paths {
                let full = resolve(base_dir, p);
                if !full.is_file() {
                    return Err(Error::config(field, format!("{} does not exist", full.display())));
                }
            }
        }
        if self.corpus.retain_books.is_empty() {
            return Err(Error::config("corpus.retain_books", "at least one book is required for D_nor"));
        }
        self.chunking
            .validate()
            .map_err(|e| Error::config("chunking", e.to_string()))?;
        if self.samples_per_split < 1 {
            return Err(Error::config("samples_per_split", "must be >= 1"));
        }
        self.model.validate().map_err(|e| Error::config("model", e.to_string()))?;
        if self.model.vocab_size != BYTE_VOCAB_SIZE {
            return Err(Error::config(
                "model.vocab_size",
                format!("must be {BYTE_VOCAB_SIZE} for the byte tokenizer"),
            ));
        }
        if self.chunking.chunk_len > self.model.context_len + 1 {
            return Err(Error::config(
                "chunking.chunk_len",
                format!("exceeds model context_len {} + 1", self.model.context_len),
            ));
        }
        if !registry.contains(&self.unlearn.algorithm) {
            return Err(Error::config(
                "unlearn.algorithm",
                format!(
                    "unknown algorithm {:?}; expected one of {:?}",
                    self.unlearn.algorithm,
                    registry.names()
                ),
            ));
        }
        self.unlearn.validate()?;
        self.sampler.validate()?;
        let m = &self.memorize;
        if !(m.lr > 0.0) || m.batch_size < 1 || m.eval_every < 1 {
            return Err(Error::config("memorize", "lr > 0, batch_size >= 1 and eval_every >= 1 required"));
        }
        if let Some(p) = &m.checkpoint {
            if !resolve(base_dir, p).is_file() {
                return Err(Error::config("memorize.checkpoint", format!("{} does not exist", p.display())));
            }
        }
        if self.memfree.ngram_n < 2 {
            return Err(Error::config("memfree.ngram_n", "must be >= 2"));
        }
        if !(self.memfree.fp_rate > 0.0 && self.memfree.fp_rate < 1.0) {
            return Err(Error::config("memfree.fp_rate", "must be in (0, 1)"));
        }
        let t = self.steps();
        if t < 1 || t > self.corpus.forget_books.len() {
            return Err(Error::config(
                "steps",
                format!("must be in 1..={}", self.corpus.forget_books.len()),
            ));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form.
    pub fn digest(&self) -> String {
        let value = serde_json::to_value(self).expect("config serializes");
        hex::encode(Sha256::digest(value.to_string().as_bytes()))
    }
}

pub fn resolve(base_dir: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base_dir.join(p)
    }
}

/// Best-effort field name from a serde error message.
fn field_of(e: &serde_json::Error) -> String {
    let msg = e.to_string();
    for marker in ["unknown field `", "missing field `", "unknown variant `"] {
        if let Some(rest) = msg.split(marker).nth(1) {
            if let Some(name) = rest.split('`').next() {
                return name.to_string();
            }
        }
    }
    "config".to_string()
}
