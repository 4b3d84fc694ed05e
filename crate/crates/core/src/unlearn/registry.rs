//! Unlearning algorithms behind one trait, looked up by name.

use std::collections::BTreeMap;

use super::config::{KlAnchor, UnlearnConfig};
use super::direct::{direct_descent, supervised_fine_tune, DirectObjective};
use super::task_vector::{fine_tune_stage, negate_task_vector, FineTunePlan};
use super::train::{LoopReport, LoopSpec};
use crate::corpus::SplitDataset;
use crate::error::{Error, Result};
use crate::model::{LanguageModel, OptimizerKind, ParameterVector};
use crate::rng::derive_seed;

/// Everything one time step may read.
pub struct StepContext<'a> {
    /// 1-based time step.
    pub t: usize,
    pub theta_prev: &'a LanguageModel,
    /// The model before any unlearning.
    pub theta_0: &'a LanguageModel,
    pub splits: &'a SplitDataset,
    pub cfg: &'a UnlearnConfig,
    /// Learning rate after the schedule is applied.
    pub lr: f64,
    pub seed: u64,
}

impl StepContext<'_> {
    pub fn forget(&self) -> &[crate::corpus::ChunkPair] {
        self.splits.forget(self.t)
    }
}

#[derive(Debug, Clone)]
pub struct StepOutput {
    pub theta_u: ParameterVector,
    /// Fine-tuned intermediate, only for task-vector algorithms.
    pub theta_ft: Option<ParameterVector>,
    pub report: LoopReport,
}

pub trait Unlearner: Send {
    fn name(&self) -> &str;

    /// Called once per run before the first time step.
    fn prepare(&mut self, _theta_0: &LanguageModel, _splits: &SplitDataset, _cfg: &UnlearnConfig) -> Result<()> {
        Ok(())
    }

    fn step(&self, ctx: &StepContext<'_>) -> Result<StepOutput>;
}

/// Saliency-masked fine-tuning on forget plus random-label loss, then negation.
pub struct Ssu;
/// Plain task-vector negation.
pub struct TaskVector;
pub struct GradientAscent;
pub struct GradDiff;
pub struct Npo {
    reference: Option<LanguageModel>,
}
/// Leaves the model untouched; a baseline for decoding-time defenses.
pub struct Identity;

fn two_stage(ctx: &StepContext<'_>, plan: FineTunePlan) -> Result<StepOutput> {
    let out = fine_tune_stage(ctx.theta_prev, ctx.theta_prev.params(), ctx.forget(), &plan)?;
    let theta_u = negate_task_vector(ctx.theta_prev.params(), &out.params)?;
    Ok(StepOutput {
        theta_u,
        theta_ft: Some(out.params),
        report: out.report,
    })
}

fn direct(ctx: &StepContext<'_>, objective: DirectObjective<'_>) -> Result<StepOutput> {
    let (theta_u, report) = direct_descent(
        ctx.theta_prev,
        ctx.theta_prev.params(),
        ctx.forget(),
        objective,
        ctx.cfg,
        ctx.lr,
        ctx.seed,
    )?;
    Ok(StepOutput {
        theta_u,
        theta_ft: None,
        report,
    })
}

impl Unlearner for Ssu {
    fn name(&self) -> &str {
        "ssu"
    }

    fn step(&self, ctx: &StepContext<'_>) -> Result<StepOutput> {
        two_stage(ctx, FineTunePlan::ssu(ctx.cfg, ctx.lr, ctx.seed))
    }
}

impl Unlearner for TaskVector {
    fn name(&self) -> &str {
        "tv"
    }

    fn step(&self, ctx: &StepContext<'_>) -> Result<StepOutput> {
        two_stage(ctx, FineTunePlan::task_vector(ctx.cfg, ctx.lr, ctx.seed))
    }
}

impl Unlearner for GradientAscent {
    fn name(&self) -> &str {
        "ga"
    }

    fn step(&self, ctx: &StepContext<'_>) -> Result<StepOutput> {
        direct(ctx, DirectObjective::GradientAscent)
    }
}

impl Unlearner for GradDiff {
    fn name(&self) -> &str {
        "grad_diff"
    }

    fn step(&self, ctx: &StepContext<'_>) -> Result<StepOutput> {
        let reference = match ctx.cfg.kl_anchor {
            KlAnchor::Previous => ctx.theta_prev,
            KlAnchor::Original => ctx.theta_0,
        };
        direct(
            ctx,
            DirectObjective::GradDiff {
                reference,
                auxiliary: &ctx.splits.auxiliary_retain,
            },
        )
    }
}

impl Npo {
    pub fn new() -> Self {
        Self { reference: None }
    }

    pub fn reference(&self) -> Option<&LanguageModel> {
        self.reference.as_ref()
    }
}

impl Default for Npo {
    fn default() -> Self {
        Self::new()
    }
}

impl Unlearner for Npo {
    fn name(&self) -> &str {
        "npo"
    }

    /// Builds π_ref by fine-tuning a copy of θ₀ on every forget chunk plus D_nor.
    fn prepare(&mut self, theta_0: &LanguageModel, splits: &SplitDataset, cfg: &UnlearnConfig) -> Result<()> {
        let mut data = splits.all_forget();
        data.extend(splits.retain_eval.iter().cloned());
        let spec = LoopSpec {
            epochs: cfg.npo_reference_epochs,
            batch_size: cfg.batch_size,
            seed: derive_seed(cfg.seed, "npo-reference", 0),
            divergence_guard: false,
        };
        let (model, _) = supervised_fine_tune(theta_0, &data, spec, OptimizerKind::Sgd, cfg.lr)?;
        self.reference = Some(model);
        Ok(())
    }

    fn step(&self, ctx: &StepContext<'_>) -> Result<StepOutput> {
        let reference = self
            .reference
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("npo reference model was not prepared".into()))?;
        direct(ctx, DirectObjective::Npo { reference })
    }
}

impl Unlearner for Identity {
    fn name(&self) -> &str {
        "none"
    }

    fn step(&self, ctx: &StepContext<'_>) -> Result<StepOutput> {
        Ok(StepOutput {
            theta_u: ctx.theta_prev.params().clone(),
            theta_ft: None,
            report: LoopReport::default(),
        })
    }
}

pub type Factory = fn() -> Box<dyn Unlearner>;

/// Lower-cases and drops `_`/`-`, so `GradDiff`, `grad_diff` and `grad-diff` agree.
pub fn normalize_name(name: &str) -> String {
    name.chars()
        .filter(|c| *c != '_' && *c != '-')
        .flat_map(char::to_lowercase)
        .collect()
}

#[derive(Clone)]
pub struct Registry {
    entries: BTreeMap<String, (String, Factory)>,
}

impl Registry {
    pub fn empty() -> Self {
        Self {
            entries: BTreeMap::new(),
        }
    }

    pub fn builtin() -> Self {
        let mut r = Self::empty();
        r.register("ssu", || Box::new(Ssu));
        r.register("tv", || Box::new(TaskVector));
        r.register("ga", || Box::new(GradientAscent));
        r.register("grad_diff", || Box::new(GradDiff));
        r.register("npo", || Box::new(Npo::new()));
        r.register("none", || Box::new(Identity));
        r
    }

    /// Adds or replaces an algorithm.
    pub fn register(&mut self, name: &str, factory: Factory) {
        self.entries.insert(normalize_name(name), (name.to_string(), factory));
    }

    pub fn create(&self, name: &str) -> Result<Box<dyn Unlearner>> {
        self.entries
            .get(&normalize_name(name))
            .map(|(_, f)| f())
            .ok_or_else(|| Error::UnknownAlgorithm(name.to_string()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(&normalize_name(name))
    }

    pub fn names(&self) -> Vec<&str> {
        self.entries.values().map(|(n, _)| n.as_str()).collect()
    }
}

impl Default for Registry {
    fn default() -> Self {
        Self::builtin()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lookup_normalizes() {
        let r = Registry::builtin();
        assert_eq!(r.create("GradDiff").unwrap().name(), "grad_diff");
        assert_eq!(r.create("SSU").unwrap().name(), "ssu");
        assert!(matches!(r.create("dpo"), Err(Error::UnknownAlgorithm(_))));
        assert_eq!(r.names().len(), 6);
    }

    #[test]
    fn custom_registration_replaces() {
        let mut r = Registry::builtin();
        r.register("ssu", || Box::new(Identity));
        assert_eq!(r.create("ssu").unwrap().name(), "none");
    }
}
