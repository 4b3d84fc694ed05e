use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::config::{resolve, ExperimentConfig};
use crate::corpus::{build_schedule, chunk_document, ingest_document, ChunkPair, Document, DocumentRole, SplitDataset};
use crate::corpus::Tokenizer as _;
use crate::decode::{greedy_generate, NGramFilter, PromptPreset};
use crate::error::{Error, Result};
use crate::eval::{
    eval_split, eval_split_with, perplexity, tradeoff_report, write_metrics_csv, EvalSetup, MetricReport, SplitScore,
};
use crate::fsutil::write_atomic;
use crate::model::{checkpoint_load, checkpoint_save, LanguageModel, CHECKPOINT_VERSION};
use crate::rng::derive_seed;
use crate::unlearn::train::{train_loop, LoopSpec};
use crate::unlearn::{run_sequence, Registry, StepObserver, TimeStepResult};

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "state")]
pub enum RunStatus {
    Running,
    Completed,
    Failed { message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Versions {
    pub package: String,
    pub manifest_format: u32,
    pub checkpoint_format: u32,
    pub filter_format: u32,
    pub tokenizer: String,
}

impl Versions {
    pub fn current() -> Self {
        Self {
            package: env!("CARGO_PKG_VERSION").to_string(),
            manifest_format: MANIFEST_VERSION,
            checkpoint_format: CHECKPOINT_VERSION,
            filter_format: crate::decode::bloom::FILTER_VERSION,
            tokenizer: crate::corpus::ByteTokenizer::default().id().to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VanillaRecord {
    pub checkpoint: String,
    /// Epochs trained; `None` when loaded from an existing checkpoint.
    pub epochs: Option<usize>,
    pub forget_greedy_rouge_l: f64,
    pub retain_perplexity: f64,
    pub wall_clock_secs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: usize,
    pub lr: f64,
    pub theta_u_checkpoint: String,
    pub theta_ft_checkpoint: Option<String>,
    pub metrics: String,
    pub train_steps: usize,
    pub final_loss: Option<f64>,
    pub gamma: Option<f64>,
    pub mask_fraction: Option<f64>,
    pub wall_clock_secs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_digest: String,
    pub config: ExperimentConfig,
    pub versions: Versions,
    pub algorithm: String,
    pub vanilla: Option<VanillaRecord>,
    pub steps: Vec<StepRecord>,
    pub status: RunStatus,
    pub wall_clock_secs: f64,
}

pub const MANIFEST_FILE: &str = "manifest.json";
pub const METRICS_CSV: &str = "metrics/metrics.csv";
pub const VANILLA_CSV: &str = "metrics/vanilla.csv";
pub const VANILLA_CKPT: &str = "checkpoints/vanilla.ckpt";

impl RunManifest {
    pub fn write(&self, run_dir: &Path) -> Result<()> {
        let mut bytes = serde_json::to_vec_pretty(self)?;
        bytes.push(b'\n');
        write_atomic(&run_dir.join(MANIFEST_FILE), &bytes)
    }

    pub fn read(run_dir: &Path) -> Result<Self> {
        let path = run_dir.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let m: Self = serde_json::from_str(&text)?;
        if m.config.digest() != m.config_digest {
            return Err(Error::DigestMismatch);
        }
        Ok(m)
    }
}

/// Books of the experiment loaded from disk.
pub struct Books {
    pub forget: Vec<Document>,
    pub retain: Vec<Document>,
    pub auxiliary: Vec<Document>,
}

impl Books {
    pub fn load(cfg: &ExperimentConfig, base_dir: &Path) -> Result<Self> {
        let read = |paths: &[PathBuf], role| {
            paths
                .iter()
                .map(|p| ingest_document(&resolve(base_dir, p), role))
                .collect::<Result<Vec<_>>>()
        };
        Ok(Self {
            forget: read(&cfg.corpus.forget_books, DocumentRole::ForgetCandidate)?,
            retain: read(&cfg.corpus.retain_books, DocumentRole::Retain)?,
            auxiliary: read(&cfg.corpus.auxiliary_books, DocumentRole::Auxiliary)?,
        })
    }

    pub fn schedule(&self, cfg: &ExperimentConfig) -> Result<SplitDataset> {
        build_schedule(
            &self.forget,
            &self.retain,
            &self.auxiliary,
            cfg.chunking,
            cfg.samples_per_split,
            derive_seed(cfg.seed, "schedule", 0),
        )
    }

    /// Every chunk of every book, the vanilla training set.
    pub fn all_chunks(&self, cfg: &ExperimentConfig) -> Result<Vec<ChunkPair>> {
        let mut out = Vec::new();
        for d in self.forget.iter().chain(&self.retain).chain(&self.auxiliary) {
            out.extend(chunk_document(d, cfg.chunking)?);
        }
        Ok(out)
    }
}

/// Mean greedy Rouge-L over `split`.
pub fn greedy_rouge_l(model: &LanguageModel, split: &[ChunkPair]) -> Result<f64> {
    let s = eval_split_with(split, |_, c| {
        let out = greedy_generate(model, c.prompt.as_slice(), c.continuation.len())?;
        Ok(crate::corpus::detokenize(out.as_slice()))
    })?;
    Ok(s.rouge_l)
}

pub struct MemorizeOutcome {
    pub model: LanguageModel,
    pub epochs: usize,
    pub forget_rouge_l: f64,
}

/// Trains a fresh model on `train` until greedy Rouge-L on `forget` reaches the target.
pub fn memorize(cfg: &ExperimentConfig, train: &[ChunkPair], forget: &[ChunkPair]) -> Result<MemorizeOutcome> {
    let mc = &cfg.memorize;
    let mut model = LanguageModel::init(cfg.model.clone())?;
    let mut optimizer = mc.optimizer.build(mc.lr);
    let mut epochs = 0;
    let mut score = greedy_rouge_l(&model, forget)?;
    while score < mc.target_rouge_l && epochs < mc.max_epochs {
        let n = mc.eval_every.min(mc.max_epochs - epochs);
        for _ in 0..n {
            let spec = LoopSpec {
                epochs: 1,
                batch_size: mc.batch_size,
                seed: derive_seed(cfg.seed, "memorize", epochs as u64),
                divergence_guard: false,
            };
            train_loop(
                &mut model,
                train,
                spec,
                &mut optimizer,
                |m, batch, _| crate::model::loss_and_grad(m, &crate::objectives::ForgetLoss::new(batch)?),
                |_, _| Ok(None),
            )?;
            epochs += 1;
        }
        score = greedy_rouge_l(&model, forget)?;
    }
    Ok(MemorizeOutcome {
        model,
        epochs,
        forget_rouge_l: score,
    })
}

/// Split labels and chunk sets evaluated at step `t`.
pub fn step_splits(splits: &SplitDataset, t: usize) -> Vec<(&'static str, &[ChunkPair])> {
    let mut v = vec![("forget", splits.forget(t))];
    if !splits.previous(t).is_empty() {
        v.push(("previous", splits.previous(t)));
    }
    v.push(("retain", splits.retain_eval.as_slice()));
    v
}

/// Forget chunks of books `1..=t`, the text a MemFree filter protects at step `t`.
pub fn protected_chunks(splits: &SplitDataset, t: usize) -> Vec<ChunkPair> {
    splits.forget_per_step[..t].iter().flatten().cloned().collect()
}

/// Scores a model at time step `t`: plain evaluation on D_f, D_prev and D_nor,
/// then the configured prompt and MemFree variants on D_f and D_prev.
pub fn evaluate_model(
    model: &LanguageModel,
    cfg: &ExperimentConfig,
    splits: &SplitDataset,
    t: usize,
    vanilla_retain_ppl: f64,
) -> Result<MetricReport> {
    let plain = EvalSetup {
        sampler: &cfg.sampler,
        preset: None,
        guard: None,
    };
    let mut scores: Vec<(String, SplitScore)> = Vec::new();
    for (label, set) in step_splits(splits, t) {
        scores.push((label.to_string(), eval_split(model, set, plain)?));
    }
    let targets: Vec<(&str, &[ChunkPair])> = step_splits(splits, t)
        .into_iter()
        .filter(|(l, _)| *l != "retain")
        .collect();
    for preset in &cfg.prompt_presets {
        let setup = EvalSetup {
            preset: Some(*preset),
            ..plain
        };
        for (label, set) in &targets {
            scores.push((format!("{label}+{}", PromptPreset::name(*preset)), eval_split(model, set, setup)?));
        }
    }
    if cfg.memfree.enabled {
        let filter = NGramFilter::from_chunks(&protected_chunks(splits, t), cfg.memfree.ngram_n, cfg.memfree.fp_rate)?;
        let setup = EvalSetup {
            guard: Some(&filter),
            ..plain
        };
        for (label, set) in &targets {
            scores.push((format!("{label}+memfree"), eval_split(model, set, setup)?));
        }
    }
    let ppl = perplexity(model, &splits.retain_eval)?;
    let find = |l: &str| scores.iter().find(|(x, _)| x == l).map(|(_, s)| *s);
    let forget = find("forget").expect("forget split always scored");
    let previous = find("previous");
    let trade = tradeoff_report(&forget, previous.as_ref(), ppl, vanilla_retain_ppl)?;
    Ok(MetricReport {
        t,
        algorithm: cfg.unlearn.algorithm.clone(),
        splits: scores,
        retain_perplexity: ppl,
        efficacy: trade.efficacy,
        ability_proxy: trade.ability_proxy,
        gamma: None,
        mask_fraction: None,
    })
}

fn rel(run_dir: &Path, p: &Path) -> String {
    p.strip_prefix(run_dir).unwrap_or(p).to_string_lossy().replace('\\', "/")
}

struct Recorder<'a> {
    cfg: &'a ExperimentConfig,
    splits: &'a SplitDataset,
    run_dir: &'a Path,
    vanilla: &'a LanguageModel,
    vanilla_ppl: f64,
    manifest: RunManifest,
    reports: Vec<MetricReport>,
    vanilla_reports: Vec<MetricReport>,
    started: Instant,
}

impl StepObserver for Recorder<'_> {
    fn on_step(&mut self, model: &LanguageModel, result: &mut TimeStepResult) -> Result<()> {
        let t = result.t;
        let ckpt = self.run_dir.join(format!("checkpoints/step_{t}_u.ckpt"));
        checkpoint_save(&ckpt, model.config(), model.params())?;
        result.theta_u_checkpoint = Some(ckpt.clone());
        if let Some(ft) = &result.theta_ft {
            let p = self.run_dir.join(format!("checkpoints/ft/step_{t}_ft.ckpt"));
            checkpoint_save(&p, model.config(), ft)?;
            result.theta_ft_checkpoint = Some(p);
        }

        let mut report = evaluate_model(model, self.cfg, self.splits, t, self.vanilla_ppl)?;
        report.gamma = result.report.last_gamma;
        report.mask_fraction = result.report.mean_mask_fraction();
        let metrics = self.run_dir.join(format!("metrics/step_{t}.json"));
        report.write_json(&metrics)?;
        result.metrics = Some(metrics.clone());
        self.reports.push(report);
        write_metrics_csv(&self.run_dir.join(METRICS_CSV), &self.reports)?;

        let mut plain_cfg = self.cfg.clone();
        plain_cfg.prompt_presets.clear();
        plain_cfg.memfree.enabled = false;
        let mut v = evaluate_model(self.vanilla, &plain_cfg, self.splits, t, self.vanilla_ppl)?;
        v.algorithm = "vanilla".into();
        self.vanilla_reports.push(v);
        write_metrics_csv(&self.run_dir.join(VANILLA_CSV), &self.vanilla_reports)?;

        self.manifest.steps.push(StepRecord {
            t,
            lr: result.lr,
            theta_u_checkpoint: rel(self.run_dir, &ckpt),
            theta_ft_checkpoint: result.theta_ft_checkpoint.as_deref().map(|p| rel(self.run_dir, p)),
            metrics: rel(self.run_dir, &metrics),
            train_steps: result.report.steps(),
            final_loss: result.report.losses.last().copied(),
            gamma: result.report.last_gamma,
            mask_fraction: result.report.mean_mask_fraction(),
            wall_clock_secs: result.wall_clock_secs,
        });
        self.manifest.wall_clock_secs = self.started.elapsed().as_secs_f64();
        self.manifest.write(self.run_dir)
    }
}

/// Resolved output directory of a config.
pub fn run_dir_of(cfg: &ExperimentConfig, base_dir: &Path) -> PathBuf {
    resolve(base_dir, &cfg.output_dir)
}

/// Vanilla phase, then sequential unlearning with per-step checkpoints and
/// metrics. A failing step is recorded in the manifest status; earlier
/// artifacts stay in place.
pub fn run_experiment(cfg: &ExperimentConfig, base_dir: &Path, registry: &Registry) -> Result<RunManifest> {
    cfg.validate(base_dir, registry)?;
    let started = Instant::now();
    let run_dir = run_dir_of(cfg, base_dir);
    std::fs::create_dir_all(run_dir.join("checkpoints/ft")).map_err(|e| Error::io(&run_dir, e))?;
    std::fs::create_dir_all(run_dir.join("metrics")).map_err(|e| Error::io(&run_dir, e))?;

    let books = Books::load(cfg, base_dir)?;
    let splits = books.schedule(cfg)?;
    let mut manifest = RunManifest {
        config_digest: cfg.digest(),
        config: cfg.clone(),
        versions: Versions::current(),
        algorithm: cfg.unlearn.algorithm.clone(),
        vanilla: None,
        steps: Vec::new(),
        status: RunStatus::Running,
        wall_clock_secs: 0.0,
    };
    manifest.write(&run_dir)?;

    let vanilla_started = Instant::now();
    let forget_all = splits.all_forget();
    let (vanilla, epochs, rouge) = match &cfg.memorize.checkpoint {
        Some(p) => {
            let model = checkpoint_load(&resolve(base_dir, p))?.into_model()?;
            if model.config() != &cfg.model {
                return Err(Error::config("memorize.checkpoint", "model config differs from `model`"));
            }
            let r = greedy_rouge_l(&model, &forget_all)?;
            (model, None, r)
        }
        None => {
            let out = memorize(cfg, &books.all_chunks(cfg)?, &forget_all)?;
            (out.model, Some(out.epochs), out.forget_rouge_l)
        }
    };
    let vanilla_ckpt = run_dir.join(VANILLA_CKPT);
    checkpoint_save(&vanilla_ckpt, vanilla.config(), vanilla.params())?;
    let vanilla_ppl = perplexity(&vanilla, &splits.retain_eval)?;
    manifest.vanilla = Some(VanillaRecord {
        checkpoint: VANILLA_CKPT.to_string(),
        epochs,
        forget_greedy_rouge_l: rouge,
        retain_perplexity: vanilla_ppl,
        wall_clock_secs: vanilla_started.elapsed().as_secs_f64(),
    });
    manifest.write(&run_dir)?;

    let mut recorder = Recorder {
        cfg,
        splits: &splits,
        run_dir: &run_dir,
        vanilla: &vanilla,
        vanilla_ppl,
        manifest,
        reports: Vec::new(),
        vanilla_reports: Vec::new(),
        started,
    };
    let outcome = run_sequence(&vanilla, &splits, &cfg.unlearn, registry, cfg.steps(), &mut recorder);
    let mut manifest = recorder.manifest;
    manifest.status = match outcome {
        Ok(run) => match run.aborted {
            None => RunStatus::Completed,
            Some(e) => RunStatus::Failed { message: e.to_string() },
        },
        Err(e) => RunStatus::Failed { message: e.to_string() },
    };
    manifest.wall_clock_secs = started.elapsed().as_secs_f64();
    manifest.write(&run_dir)?;
    if !manifest.steps.is_empty() {
        super::report::write_tradeoff_csv(&run_dir, &manifest)?;
    }
    Ok(manifest)
}

/// Re-scores a checkpoint at time step `t` of the config's schedule. The
/// ability proxy is relative to `vanilla` when given, else to the checkpoint itself.
pub fn evaluate_checkpoint(
    cfg: &ExperimentConfig,
    base_dir: &Path,
    checkpoint: &Path,
    t: usize,
    vanilla: Option<&Path>,
) -> Result<MetricReport> {
    let books = Books::load(cfg, base_dir)?;
    let splits = books.schedule(cfg)?;
    if t < 1 || t > splits.steps() {
        return Err(Error::InvalidArgument(format!("time step {t} outside 1..={}", splits.steps())));
    }
    let model = checkpoint_load(checkpoint)?.into_model()?;
    let vanilla_ppl = match vanilla {
        Some(p) => perplexity(&checkpoint_load(p)?.into_model()?, &splits.retain_eval)?,
        None => perplexity(&model, &splits.retain_eval)?,
    };
    evaluate_model(&model, cfg, &splits, t, vanilla_ppl)
}
