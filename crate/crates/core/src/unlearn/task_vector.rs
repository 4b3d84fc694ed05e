//! Two-stage task-vector unlearning: fine-tune on the forget set, then
//! subtract the learned delta from the starting weights.

use super::config::{MaskMode, UnlearnConfig};
use super::saliency::{saliency_mask, GammaPolicy, SaliencyMask};
use super::train::{train_loop, LoopReport, LoopSpec};
use crate::corpus::ChunkPair;
use crate::error::Result;
use crate::model::{loss_and_grad, param_axpy, LanguageModel, OptimizerKind, ParameterVector};
use crate::objectives::{ForgetLoss, RandomLabelLoss, SsuWeights, WeightedSum};
use crate::rng::derive_seed;

/// Settings for the fine-tuning stage.
#[derive(Debug, Clone)]
pub struct FineTunePlan {
    pub weights: SsuWeights,
    /// `None` writes every coordinate (plain task vectors).
    pub saliency: Option<(GammaPolicy, MaskMode)>,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub k_random: usize,
    pub seed: u64,
    pub optimizer: OptimizerKind,
    pub divergence_guard: bool,
}

impl FineTunePlan {
    pub fn ssu(cfg: &UnlearnConfig, lr: f64, seed: u64) -> Self {
        Self {
            weights: cfg.ssu_weights,
            saliency: Some((cfg.gamma_policy, cfg.mask_mode)),
            lr,
            epochs: cfg.epochs,
            batch_size: cfg.batch_size,
            k_random: cfg.k_random,
            seed,
            optimizer: cfg.optimizer,
            divergence_guard: cfg.divergence_guard,
        }
    }

    pub fn task_vector(cfg: &UnlearnConfig, lr: f64, seed: u64) -> Self {
        Self {
            weights: SsuWeights { eps1: 1.0, eps2: 0.0 },
            saliency: None,
            ..Self::ssu(cfg, lr, seed)
        }
    }
}

#[derive(Debug, Clone)]
pub struct FineTuneOutcome {
    pub params: ParameterVector,
    pub report: LoopReport,
}

/// Minimizes `ε₁·L_fgt + ε₂·L_rnd` from `start`, gating each write with the
/// saliency mask of the current gradient. Mismatched continuations for a batch
/// are drawn from the whole `forget_set`.
pub fn fine_tune_stage(
    base: &LanguageModel,
    start: &ParameterVector,
    forget_set: &[ChunkPair],
    plan: &FineTunePlan,
) -> Result<FineTuneOutcome> {
    plan.weights.validate()?;
    let mut model = base.with_params(start.clone())?;
    let mut optimizer = plan.optimizer.build(plan.lr);
    let spec = LoopSpec {
        epochs: plan.epochs,
        batch_size: plan.batch_size,
        seed: plan.seed,
        divergence_guard: plan.divergence_guard,
    };
    let weights = plan.weights;
    let objective = |m: &LanguageModel, batch: &[ChunkPair], step: usize| {
        let mut obj = WeightedSum::new();
        if weights.eps1 != 0.0 {
            obj = obj.term(weights.eps1, ForgetLoss::new(batch)?);
        }
        if weights.eps2 != 0.0 {
            obj = obj.term(
                weights.eps2,
                RandomLabelLoss::with_pool(
                    batch,
                    forget_set,
                    plan.k_random,
                    derive_seed(plan.seed, "random-label", step as u64),
                )?,
            );
        }
        loss_and_grad(m, &obj)
    };
    let mut frozen: Option<SaliencyMask> = None;
    let saliency = plan.saliency;
    let mask = |grad: &ParameterVector, _step: usize| -> Result<Option<SaliencyMask>> {
        match saliency {
            None => Ok(None),
            Some((policy, MaskMode::PerStep)) => Ok(Some(saliency_mask(grad, policy)?)),
            Some((policy, MaskMode::Frozen)) => {
                if frozen.is_none() {
                    frozen = Some(saliency_mask(grad, policy)?);
                }
                Ok(frozen.clone())
            }
        }
    };
    let report = train_loop(&mut model, forget_set, spec, &mut optimizer, objective, mask)?;
    Ok(FineTuneOutcome {
        params: model.params().clone(),
        report,
    })
}

/// `θ_u = θ_prev − (θ_ft − θ_prev) = 2·θ_prev − θ_ft`.
pub fn negate_task_vector(theta_prev: &ParameterVector, theta_ft: &ParameterVector) -> Result<ParameterVector> {
    param_axpy(2.0, theta_prev, -1.0, theta_ft)
}
