//! Sequence cross-entropy and the differentiable-objective interface.

use super::params::ParameterVector;
use super::transformer::{LanguageModel, Matrix};
use crate::error::{Error, Result};

/// A scalar function of the model's parameters with an analytic gradient.
pub trait Objective {
    /// Value and gradient. The gradient shares the model's segment table.
    fn value_and_grad(&self, model: &LanguageModel) -> Result<(f64, ParameterVector)>;

    /// Value only; used by finite-difference checks and diagnostics.
    fn value(&self, model: &LanguageModel) -> Result<f64> {
        Ok(self.value_and_grad(model)?.0)
    }
}

impl<F> Objective for F
where
    F: Fn(&LanguageModel) -> Result<(f64, ParameterVector)>,
{
    fn value_and_grad(&self, model: &LanguageModel) -> Result<(f64, ParameterVector)> {
        self(model)
    }
}

pub fn loss_and_grad(model: &LanguageModel, objective: &dyn Objective) -> Result<(f64, ParameterVector)> {
    let (loss, grad) = objective.value_and_grad(model)?;
    if !loss.is_finite() {
        return Err(Error::NonFiniteLoss(loss));
    }
    debug_assert!(grad.same_layout(model.params()));
    Ok((loss, grad))
}

/// Numerically stable log-softmax of one row.
pub fn log_softmax(row: &[f64]) -> Vec<f64> {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    row.iter().map(|v| v - lse).collect()
}

pub fn softmax(row: &[f64]) -> Vec<f64> {
    log_softmax(row).into_iter().map(f64::exp).collect()
}

/// Model input for scoring `target` after `prompt`: the prompt followed by all
/// but the last target token. Row `prompt.len() - 1 + i` predicts `target[i]`.
pub(crate) fn scoring_input(prompt: &[u32], target: &[u32]) -> Result<Vec<u32>> {
    if target.is_empty() {
        return Err(Error::Empty("target"));
    }
    if prompt.is_empty() {
        return Err(Error::Empty("prompt"));
    }
    let mut input = Vec::with_capacity(prompt.len() + target.len() - 1);
    input.extend_from_slice(prompt);
    input.extend_from_slice(&target[..target.len() - 1]);
    Ok(input)
}

/// Summed cross-entropy of `target` given `prompt`.
pub fn sequence_nll(model: &LanguageModel, prompt: &[u32], target: &[u32]) -> Result<f64> {
    let input = scoring_input(prompt, target)?;
    check_len(model, prompt, target)?;
    let logits = model.forward(&input)?;
    Ok(nll_from_logits(&logits, prompt.len() - 1, target))
}

fn check_len(model: &LanguageModel, prompt: &[u32], target: &[u32]) -> Result<()> {
    let len = prompt.len() + target.len();
    if len > model.config().context_len {
        return Err(Error::SequenceTooLong {
            len,
            context_len: model.config().context_len,
        });
    }
    Ok(())
}

pub fn nll_from_logits(logits: &Matrix, first_row: usize, target: &[u32]) -> f64 {
    target
        .iter()
        .enumerate()
        .map(|(i, &y)| -log_softmax(logits.row(first_row + i))[y as usize])
        .sum()
}

/// Logits of a scored (prompt, target) pair, cached for one backward pass.
pub(crate) struct ScoredPair {
    pub logits: Matrix,
    pub first_row: usize,
    cache: super::transformer::ForwardCache,
}

impl ScoredPair {
    pub fn new(model: &LanguageModel, prompt: &[u32], target: &[u32]) -> Result<Self> {
        let input = scoring_input(prompt, target)?;
        check_len(model, prompt, target)?;
        let (logits, cache) = model.forward_with_cache(&input)?;
        Ok(Self {
            logits,
            first_row: prompt.len() - 1,
            cache,
        })
    }

    pub fn target_rows(&self) -> std::ops::Range<usize> {
        self.first_row..self.logits.rows
    }

    pub fn nll(&self, target: &[u32]) -> f64 {
        nll_from_logits(&self.logits, self.first_row, target)
    }

    /// `weight · ∂NLL/∂logits`.
    pub fn nll_dlogits(&self, target: &[u32], weight: f64) -> Matrix {
        let mut d = Matrix::zeros(self.logits.rows, self.logits.cols);
        for (i, &y) in target.iter().enumerate() {
            let r = self.first_row + i;
            let p = softmax(self.logits.row(r));
            let out = d.row_mut(r);
            for (o, pi) in out.iter_mut().zip(p) {
                *o = weight * pi;
            }
            out[y as usize] -= weight;
        }
        d
    }

    pub fn backward(&self, model: &LanguageModel, dlogits: &Matrix, grad: &mut ParameterVector) {
        model.backward(&self.cache, dlogits, grad);
    }
}

/// Adds `weight · ∇NLL(prompt, target)` to `grad` and returns the NLL.
pub(crate) fn accumulate_nll(
    model: &LanguageModel,
    prompt: &[u32],
    target: &[u32],
    weight: f64,
    grad: &mut ParameterVector,
) -> Result<f64> {
    let pair = ScoredPair::new(model, prompt, target)?;
    let nll = pair.nll(target);
    if weight != 0.0 {
        let d = pair.nll_dlogits(target, weight);
        pair.backward(model, &d, grad);
    }
    Ok(nll)
}
