//! Direct-descent baselines: gradient ascent, gradient difference and NPO.

use super::config::UnlearnConfig;
use super::train::{train_loop, LoopReport, LoopSpec};
use crate::corpus::ChunkPair;
use crate::error::{Error, Result};
use crate::model::{loss_and_grad, LanguageModel, ParameterVector};
use crate::objectives::{gradient_ascent_objective, grad_diff_objective, npo_loss, ForgetLoss};
use crate::rng::derive_seed;

/// The per-batch objective of a direct-descent baseline.
pub enum DirectObjective<'a> {
    GradientAscent,
    GradDiff {
        reference: &'a LanguageModel,
        auxiliary: &'a [ChunkPair],
    },
    Npo {
        reference: &'a LanguageModel,
    },
}

/// `step`-th window of `batch_size` auxiliary chunks, wrapping around.
pub fn cycle_window(aux: &[ChunkPair], step: usize, batch_size: usize) -> Vec<ChunkPair> {
    if aux.is_empty() {
        return Vec::new();
    }
    let start = step * batch_size;
    (0..batch_size.min(aux.len()))
        .map(|i| aux[(start + i) % aux.len()].clone())
        .collect()
}

/// Minimizes the chosen objective over `forget_set` from `start` with unmasked updates.
pub fn direct_descent(
    base: &LanguageModel,
    start: &ParameterVector,
    forget_set: &[ChunkPair],
    objective: DirectObjective<'_>,
    cfg: &UnlearnConfig,
    lr: f64,
    seed: u64,
) -> Result<(ParameterVector, LoopReport)> {
    let mut model = base.with_params(start.clone())?;
    let mut optimizer = cfg.optimizer.build(lr);
    let spec = LoopSpec {
        epochs: cfg.epochs,
        batch_size: cfg.batch_size,
        seed,
        divergence_guard: cfg.divergence_guard,
    };
    if let DirectObjective::GradDiff { auxiliary, .. } = &objective {
        let w = cfg.graddiff_weights;
        if (w.eps2 > 0.0 || w.eps3 > 0.0) && auxiliary.is_empty() {
            return Err(Error::Empty("auxiliary retain set"));
        }
    }
    let f = |m: &LanguageModel, batch: &[ChunkPair], step: usize| match &objective {
        DirectObjective::GradientAscent => loss_and_grad(m, &gradient_ascent_objective(batch)?),
        DirectObjective::GradDiff { reference, auxiliary } => {
            let aux = cycle_window(auxiliary, step, cfg.batch_size);
            let obj = grad_diff_objective(
                reference,
                batch,
                &aux,
                cfg.graddiff_weights,
                cfg.k_random,
                derive_seed(seed, "random-label", step as u64),
            )?;
            loss_and_grad(m, &obj)
        }
        DirectObjective::Npo { reference } => loss_and_grad(m, &npo_loss(reference, cfg.npo_beta, batch)?),
    };
    let report = train_loop(&mut model, forget_set, spec, &mut optimizer, f, |_, _| Ok(None))?;
    Ok((model.params().clone(), report))
}

/// Fine-tunes a copy of `base` on `data` with plain next-token loss. Used for
/// the NPO reference policy and for memorization.
pub fn supervised_fine_tune(
    base: &LanguageModel,
    data: &[ChunkPair],
    spec: LoopSpec,
    optimizer: crate::model::OptimizerKind,
    lr: f64,
) -> Result<(LanguageModel, LoopReport)> {
    let mut model = base.clone();
    let mut opt = optimizer.build(lr);
    let report = train_loop(
        &mut model,
        data,
        spec,
        &mut opt,
        |m, batch, _| loss_and_grad(m, &ForgetLoss::new(batch)?),
        |_, _| Ok(None),
    )?;
    Ok((model, report))
}
