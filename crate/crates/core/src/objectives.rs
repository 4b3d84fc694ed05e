//! Training objectives for memorization, fine-tuning and unlearning.
//!
//! Every objective here averages over the pairs it is given (sum over target
//! tokens inside a pair, mean across pairs), so a mini-batch of size `b`
//! contributes `1/b` of each pair's summed cross-entropy.

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::corpus::ChunkPair;
use crate::error::{Error, Result};
use crate::model::loss::{accumulate_nll, softmax, ScoredPair};
use crate::model::{LanguageModel, Matrix, Objective, ParameterVector};
use crate::rng::seeded;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SsuWeights {
    pub eps1: f64,
    pub eps2: f64,
}

impl Default for SsuWeights {
    fn default() -> Self {
        Self { eps1: 1.0, eps2: 0.5 }
    }
}

impl SsuWeights {
    pub fn validate(&self) -> Result<()> {
        if self.eps1 < 0.0 || self.eps2 < 0.0 || (self.eps1 == 0.0 && self.eps2 == 0.0) {
            return Err(Error::InvalidArgument(format!(
                "SSU weights must be >= 0 and not both zero, got {self:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GradDiffWeights {
    pub eps1: f64,
    pub eps2: f64,
    pub eps3: f64,
}

impl Default for GradDiffWeights {
    fn default() -> Self {
        Self {
            eps1: 1.0,
            eps2: 0.5,
            eps3: 0.5,
        }
    }
}

impl GradDiffWeights {
    pub fn validate(&self) -> Result<()> {
        if self.eps1 <= 0.0 || self.eps2 < 0.0 || self.eps3 < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "gradient-difference weights need eps1 > 0 and eps2, eps3 >= 0, got {self:?}"
            )));
        }
        Ok(())
    }
}

pub const DEFAULT_NPO_BETA: f64 = 0.4;

fn require_nonempty(set: &[ChunkPair], what: &'static str) -> Result<()> {
    if set.is_empty() {
        Err(Error::Empty(what))
    } else {
        Ok(())
    }
}

/// Mean summed cross-entropy of each pair's continuation.
pub struct ForgetLoss<'a> {
    pub set: &'a [ChunkPair],
}

impl<'a> ForgetLoss<'a> {
    pub fn new(set: &'a [ChunkPair]) -> Result<Self> {
        require_nonempty(set, "forget set")?;
        Ok(Self { set })
    }
}

impl Objective for ForgetLoss<'_> {
    fn value_and_grad(&self, model: &LanguageModel) -> Result<(f64, ParameterVector)> {
        let mut grad = model.zero_grad();
        let w = 1.0 / self.set.len() as f64;
        let mut total = 0.0;
        for c in self.set {
            total += accumulate_nll(model, c.prompt.as_slice(), c.continuation.as_slice(), w, &mut grad)?;
        }
        Ok((total * w, grad))
    }

    fn value(&self, model: &LanguageModel) -> Result<f64> {
        let mut total = 0.0;
        for c in self.set {
            total += crate::model::sequence_nll(model, c.prompt.as_slice(), c.continuation.as_slice())?;
        }
        Ok(total / self.set.len() as f64)
    }
}

/// For each prompt, the indices into the continuation pool it is scored against.
#[derive(Debug, Clone, PartialEq)]
pub struct MismatchPlan {
    pub rows: Vec<Vec<usize>>,
}

impl MismatchPlan {
    /// Samples up to `k` continuations per prompt from `pool`, never the prompt's
    /// own chunk. `k >= pool.len()` scores every admissible continuation.
    pub fn sample(prompts: &[ChunkPair], pool: &[ChunkPair], k: usize, seed: u64) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidArgument("k must be >= 1".into()));
        }
        let mut rng = seeded(seed);
        let mut rows = Vec::with_capacity(prompts.len());
        for p in prompts {
            let candidates: Vec<usize> = (0..pool.len()).filter(|&j| pool[j].key() != p.key()).collect();
            if candidates.is_empty() {
                return Err(Error::InvalidArgument(format!(
                    "no mismatched continuation available for {}#{}",
                    p.book_id, p.chunk_index
                )));
            }
            let take = k.min(candidates.len());
            let mut picked: Vec<usize> = if take == candidates.len() {
                candidates
            } else {
                index::sample(&mut rng, candidates.len(), take)
                    .into_iter()
                    .map(|i| candidates[i])
                    .collect()
            };
            picked.sort_unstable();
            rows.push(picked);
        }
        Ok(Self { rows })
    }
}

/// Prompts scored against continuations that do not belong to them.
pub struct RandomLabelLoss<'a> {
    prompts: &'a [ChunkPair],
    pool: &'a [ChunkPair],
    plan: MismatchPlan,
}

impl<'a> RandomLabelLoss<'a> {
    /// Prompts and continuations both come from the forget set.
    pub fn new(forget_set: &'a [ChunkPair], k: usize, seed: u64) -> Result<Self> {
        if forget_set.len() < 2 {
            return Err(Error::InvalidArgument(
                "random labeling needs at least two chunks".into(),
            ));
        }
        Self::with_pool(forget_set, forget_set, k, seed)
    }

    /// Prompts from `prompts`, continuations drawn from `pool`.
    pub fn with_pool(prompts: &'a [ChunkPair], pool: &'a [ChunkPair], k: usize, seed: u64) -> Result<Self> {
        require_nonempty(prompts, "prompt set")?;
        let plan = MismatchPlan::sample(prompts, pool, k, seed)?;
        Ok(Self { prompts, pool, plan })
    }

    pub fn plan(&self) -> &MismatchPlan {
        &self.plan
    }
}

impl Objective for RandomLabelLoss<'_> {
    fn value_and_grad(&self, model: &LanguageModel) -> Result<(f64, ParameterVector)> {
        let mut grad = model.zero_grad();
        let n = self.prompts.len() as f64;
        let mut total = 0.0;
        for (p, row) in self.prompts.iter().zip(&self.plan.rows) {
            let w = 1.0 / (n * row.len() as f64);
            for &j in row {
                let nll = accumulate_nll(
                    model,
                    p.prompt.as_slice(),
                    self.pool[j].continuation.as_slice(),
                    w,
                    &mut grad,
                )?;
                total += w * nll;
            }
        }
        Ok((total, grad))
    }
}

/// KL(reference ‖ trainee) summed over continuation positions, averaged over pairs.
pub struct KlRetainLoss<'a> {
    reference: &'a LanguageModel,
    set: &'a [ChunkPair],
}

impl<'a> KlRetainLoss<'a> {
    pub fn new(reference: &'a LanguageModel, set: &'a [ChunkPair]) -> Result<Self> {
        require_nonempty(set, "retain set")?;
        Ok(Self { reference, set })
    }
}

impl Objective for KlRetainLoss<'_> {
    fn value_and_grad(&self, model: &LanguageModel) -> Result<(f64, ParameterVector)> {
        if !model.params().same_layout(self.reference.params()) {
            return Err(Error::SegmentMismatch);
        }
        let mut grad = model.zero_grad();
        let w = 1.0 / self.set.len() as f64;
        let mut total = 0.0;
        for c in self.set {
            let (prompt, target) = (c.prompt.as_slice(), c.continuation.as_slice());
            let reference = ScoredPair::new(self.reference, prompt, target)?;
            let trainee = ScoredPair::new(model, prompt, target)?;
            let mut d = Matrix::zeros(trainee.logits.rows, trainee.logits.cols);
            for r in trainee.target_rows() {
                let p = softmax(reference.logits.row(r));
                let q = softmax(trainee.logits.row(r));
                let lq = crate::model::log_softmax(trainee.logits.row(r));
                let lp = crate::model::log_softmax(reference.logits.row(r));
                let kl: f64 = p.iter().zip(lp.iter().zip(&lq)).map(|(pi, (a, b))| pi * (a - b)).sum();
                total += w * kl.max(0.0);
                for ((o, qi), pi) in d.row_mut(r).iter_mut().zip(&q).zip(&p) {
                    *o = w * (qi - pi);
                }
            }
            trainee.backward(model, &d, &mut grad);
        }
        Ok((total, grad))
    }
}

/// Preference-style forget loss against a frozen reference:
/// mean of `(2/β)·softplus(β·(log π_θ(y|x) − log π_ref(y|x)))`.
pub struct NpoLoss<'a> {
    reference: &'a LanguageModel,
    beta: f64,
    set: &'a [ChunkPair],
}

impl<'a> NpoLoss<'a> {
    pub fn new(reference: &'a LanguageModel, beta: f64, set: &'a [ChunkPair]) -> Result<Self> {
        require_nonempty(set, "forget set")?;
        if !(beta > 0.0) || !beta.is_finite() {
            return Err(Error::InvalidArgument(format!("NPO beta must be > 0, got {beta}")));
        }
        if !reference.params().all_finite() {
            return Err(Error::InvalidArgument("NPO reference has non-finite parameters".into()));
        }
        Ok(Self { reference, beta, set })
    }
}

pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Objective for NpoLoss<'_> {
    fn value_and_grad(&self, model: &LanguageModel) -> Result<(f64, ParameterVector)> {
        if !model.params().same_layout(self.reference.params()) {
            return Err(Error::SegmentMismatch);
        }
        let mut grad = model.zero_grad();
        let n = self.set.len() as f64;
        let mut total = 0.0;
        for c in self.set {
            let (prompt, target) = (c.prompt.as_slice(), c.continuation.as_slice());
            let ref_logp = -crate::model::sequence_nll(self.reference, prompt, target)?;
            let pair = ScoredPair::new(model, prompt, target)?;
            let logp = -pair.nll(target);
            let margin = self.beta * (logp - ref_logp);
            total += 2.0 / self.beta * softplus(margin) / n;
            // d/dlogp = 2σ(margin); dlogp = −dNLL.
            let w = -2.0 * sigmoid(margin) / n;
            let d = pair.nll_dlogits(target, w);
            pair.backward(model, &d, &mut grad);
        }
        Ok((total, grad))
    }
}

/// `Σ wᵢ·termᵢ`; zero-weight terms are skipped entirely.
pub struct WeightedSum<'a> {
    terms: Vec<(f64, Box<dyn Objective + 'a>)>,
}

impl<'a> WeightedSum<'a> {
    pub fn new() -> Self {
        Self { terms: Vec::new() }
    }

    pub fn term(mut self, weight: f64, objective: impl Objective + 'a) -> Self {
        if weight != 0.0 {
            self.terms.push((weight, Box::new(objective)));
        }
        self
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }
}

impl Default for WeightedSum<'_> {
    fn default() -> Self {
        Self::new()
    }
}

impl Objective for WeightedSum<'_> {
    fn value_and_grad(&self, model: &LanguageModel) -> Result<(f64, ParameterVector)> {
        let mut iter = self.terms.iter();
        let Some((w0, first)) = iter.next() else {
            return Ok((0.0, model.zero_grad()));
        };
        let (v0, mut grad) = first.value_and_grad(model)?;
        grad.scale(*w0);
        let mut value = w0 * v0;
        for (w, term) in iter {
            let (v, g) = term.value_and_grad(model)?;
            value += w * v;
            grad.add_scaled(*w, &g)?;
        }
        Ok((value, grad))
    }

    fn value(&self, model: &LanguageModel) -> Result<f64> {
        let mut value = 0.0;
        for (i, (w, term)) in self.terms.iter().enumerate() {
            let v = w * term.value(model)?;
            value = if i == 0 { v } else { value + v };
        }
        Ok(value)
    }
}

pub fn forget_loss(set: &[ChunkPair]) -> Result<ForgetLoss<'_>> {
    ForgetLoss::new(set)
}

pub fn random_label_loss(set: &[ChunkPair], k: usize, seed: u64) -> Result<RandomLabelLoss<'_>> {
    RandomLabelLoss::new(set, k, seed)
}

/// `ε₁·L_fgt + ε₂·L_rnd`, the fine-tuning objective of the first stage.
pub fn ssu_objective<'a>(
    forget_set: &'a [ChunkPair],
    weights: SsuWeights,
    k: usize,
    seed: u64,
) -> Result<WeightedSum<'a>> {
    weights.validate()?;
    let mut obj = WeightedSum::new();
    if weights.eps1 != 0.0 {
        obj = obj.term(weights.eps1, ForgetLoss::new(forget_set)?);
    }
    if weights.eps2 != 0.0 {
        obj = obj.term(weights.eps2, RandomLabelLoss::new(forget_set, k, seed)?);
    }
    Ok(obj)
}

pub fn kl_retain_loss<'a>(reference: &'a LanguageModel, retain_set: &'a [ChunkPair]) -> Result<KlRetainLoss<'a>> {
    KlRetainLoss::new(reference, retain_set)
}

/// `ε₁·(−L_fgt) + ε₂·L_rnd + ε₃·KL`, with mismatched continuations and the KL
/// term both taken from the auxiliary retain set.
pub fn grad_diff_objective<'a>(
    frozen_reference: &'a LanguageModel,
    forget_set: &'a [ChunkPair],
    aux_retain_set: &'a [ChunkPair],
    weights: GradDiffWeights,
    k: usize,
    seed: u64,
) -> Result<WeightedSum<'a>> {
    weights.validate()?;
    let mut obj = WeightedSum::new().term(-weights.eps1, ForgetLoss::new(forget_set)?);
    if weights.eps2 != 0.0 {
        require_nonempty(aux_retain_set, "auxiliary retain set")?;
        obj = obj.term(
            weights.eps2,
            RandomLabelLoss::with_pool(forget_set, aux_retain_set, k, seed)?,
        );
    }
    if weights.eps3 != 0.0 {
        obj = obj.term(weights.eps3, KlRetainLoss::new(frozen_reference, aux_retain_set)?);
    }
    Ok(obj)
}

pub fn npo_loss<'a>(reference: &'a LanguageModel, beta: f64, forget_set: &'a [ChunkPair]) -> Result<NpoLoss<'a>> {
    NpoLoss::new(reference, beta, forget_set)
}

/// Gradient ascent on the forget set: minimizes `−L_fgt`.
pub fn gradient_ascent_objective(forget_set: &[ChunkPair]) -> Result<WeightedSum<'_>> {
    Ok(WeightedSum::new().term(-1.0, ForgetLoss::new(forget_set)?))
}

#[cfg(test)]
pub(crate) mod testutil {
    use super::*;
    use crate::corpus::TokenSequence;
    use crate::model::ModelConfig;
    use rand::Rng;

    pub fn toy_model(seed: u64) -> LanguageModel {
        LanguageModel::init(ModelConfig {
            vocab_size: 16,
            embed_dim: 8,
            n_layers: 2,
            n_heads: 2,
            context_len: 12,
            init_seed: seed,
            precision: Default::default(),
        })
        .unwrap()
    }

    /// Random perturbation so gradients are not dominated by the init symmetry.
    pub fn jitter(model: &LanguageModel, scale: f64, seed: u64) -> LanguageModel {
        let mut rng = seeded(seed);
        let mut p = model.params().clone();
        for v in p.values_mut() {
            *v += scale * (rng.random::<f64>() - 0.5);
        }
        model.with_params(p).unwrap()
    }

    pub fn chunks(book: &str, n: usize, seed: u64) -> Vec<ChunkPair> {
        let mut rng = seeded(seed);
        (0..n)
            .map(|i| ChunkPair {
                book_id: book.into(),
                chunk_index: i,
                prompt: TokenSequence::new((0..4).map(|_| rng.random_range(0..16)).collect(), "toy"),
                continuation: TokenSequence::new((0..4).map(|_| rng.random_range(0..16)).collect(), "toy"),
            })
            .collect()
    }

    /// Central finite-difference derivative along coordinate `i`.
    pub fn fd(obj: &dyn Objective, model: &LanguageModel, i: usize, h: f64) -> f64 {
        let mut plus = model.params().clone();
        plus.values_mut()[i] += h;
        let mut minus = model.params().clone();
        minus.values_mut()[i] -= h;
        let fp = obj.value(&model.with_params(plus).unwrap()).unwrap();
        let fm = obj.value(&model.with_params(minus).unwrap()).unwrap();
        (fp - fm) / (2.0 * h)
    }

    pub fn assert_grad_matches(obj: &dyn Objective, model: &LanguageModel, coords: usize, seed: u64) {
        let (_, grad) = obj.value_and_grad(model).unwrap();
        let mut rng = seeded(seed);
        let active: Vec<usize> = (0..grad.len()).filter(|&i| grad.values()[i].abs() > 1e-6).collect();
        assert!(active.len() >= coords);
        for _ in 0..coords {
            let i = active[rng.random_range(0..active.len())];
            let a = grad.values()[i];
            let n = fd(obj, model, i, 1e-5);
            let rel = (a - n).abs() / a.abs().max(n.abs());
            assert!(rel < 1e-6, "coord {i}: analytic {a} vs numeric {n} (rel {rel})");
        }
    }
}
